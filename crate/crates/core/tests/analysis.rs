mod common;

use cbtnet_core::analysis::*;
use cbtnet_core::{Frame, MvField, RefDir};
use common::*;
use rand::Rng;

#[test]
fn zero_field_is_white() {
    let img = visualize_mv(&MvField::zeros(8, 4, 6), RefDir::Past, 1);
    assert_eq!((img.width, img.height), (6, 4));
    assert!(img.pixels.iter().all(|&p| p == [255, 255, 255]));
}

#[test]
fn uniform_field_is_one_colour() {
    let mut f = MvField::zeros(16, 3, 3);
    for r in 0..3 {
        for c in 0..3 {
            f.set_mv(r, c, RefDir::Future, (2.0, -5.0));
        }
    }
    let img = visualize_mv(&f, RefDir::Future, 4);
    assert_eq!((img.width, img.height), (12, 12));
    let first = img.pixels[0];
    assert_ne!(first, [255, 255, 255]);
    assert!(img.pixels.iter().all(|&p| p == first));
}

#[test]
fn opposite_mvs_have_opposite_hues() {
    assert!(((mv_hue(1.0, 0.0) - mv_hue(-1.0, 0.0)).abs() - 180.0).abs() < 1e-9);
    let mut f = MvField::zeros(8, 1, 2);
    f.set_mv(0, 0, RefDir::Past, (1.0, 0.0));
    f.set_mv(0, 1, RefDir::Past, (-1.0, 0.0));
    let img = visualize_mv(&f, RefDir::Past, 1);
    // Full saturation at hues 90 and 270 degrees.
    assert_eq!(img.get(0, 0), hsv_to_rgb(90.0, 1.0, 1.0));
    assert_eq!(img.get(0, 1), hsv_to_rgb(270.0, 1.0, 1.0));
    let ppm = img.to_ppm();
    assert!(ppm.starts_with(b"P6\n2 1\n255\n"));
    assert_eq!(ppm.len(), 11 + 6);
}

#[test]
fn hsv_primaries() {
    assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [255, 0, 0]);
    assert_eq!(hsv_to_rgb(120.0, 1.0, 1.0), [0, 255, 0]);
    assert_eq!(hsv_to_rgb(240.0, 1.0, 1.0), [0, 0, 255]);
    assert_eq!(hsv_to_rgb(77.0, 0.0, 1.0), [255, 255, 255]);
}

#[test]
fn temporal_information_examples() {
    let mut r = rng(1);
    let f = noise_frame(16, 16, &mut r);
    assert_eq!(temporal_information(&[f.clone(), f.clone(), f.clone()]).unwrap(), 0.0);
    let plus = Frame::from_fn(16, 16, |y, x| f.get(y, x) + 7.0);
    assert!(temporal_information(&[f.clone(), plus]).unwrap().abs() < 1e-12);

    let frames: Vec<Frame> = (0..4).map(|_| noise_frame(16, 16, &mut r)).collect();
    let mut want: f64 = 0.0;
    for p in frames.windows(2) {
        let d: Vec<f64> = (0..256).map(|i| (p[1].data()[i] - p[0].data()[i]) as f64).collect();
        let mean = d.iter().sum::<f64>() / 256.0;
        let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 256.0;
        want = want.max(var.sqrt());
    }
    assert!((temporal_information(&frames).unwrap() - want).abs() < 1e-9);
    assert!(temporal_information(&frames[..1]).is_err());
}

fn curve(points: &[(f64, f64)]) -> Vec<RdPoint> {
    points
        .iter()
        .map(|&(bitrate, quality)| RdPoint { bitrate, quality })
        .collect()
}

fn random_curve(r: &mut impl Rng) -> Vec<(f64, f64)> {
    let mut rate = r.gen_range(200.0..400.0);
    let mut q = r.gen_range(30.0..33.0);
    (0..4)
        .map(|_| {
            let p = (rate, q);
            rate *= r.gen_range(1.6..2.4);
            q += r.gen_range(2.0..4.0);
            p
        })
        .collect()
}

#[test]
fn identical_curves_give_zero() {
    let a = curve(&[(100.0, 30.0), (180.0, 33.0), (350.0, 36.5), (700.0, 39.0)]);
    assert!(bd_rate(&a, &a).unwrap().abs() < 1e-9);
}

#[test]
fn uniform_rate_scaling_gives_its_percentage() {
    let a = curve(&[(100.0, 30.0), (180.0, 33.0), (350.0, 36.5), (700.0, 39.0)]);
    let b: Vec<RdPoint> = a
        .iter()
        .map(|p| RdPoint {
            bitrate: p.bitrate * 1.1,
            ..*p
        })
        .collect();
    assert!((bd_rate(&a, &b).unwrap() - 10.0).abs() < 1e-6);
}

#[test]
fn matches_trapezoid_oracle_on_random_curves() {
    let mut r = rng(2);
    for _ in 0..50 {
        let (a, b) = (random_curve(&mut r), random_curve(&mut r));
        let ours = match bd_rate(&curve(&a), &curve(&b)) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let oracle = trapezoid_bd_rate(&a, &b);
        assert!((ours - oracle).abs() <= 0.01, "{ours} vs {oracle}");
    }
}

#[test]
fn nearly_antisymmetric_for_close_curves() {
    let mut r = rng(3);
    for _ in 0..50 {
        let a = random_curve(&mut r);
        let b: Vec<(f64, f64)> = a
            .iter()
            .map(|&(rate, q)| (rate * r.gen_range(0.985..1.015), q))
            .collect();
        let (ab, ba) = (
            bd_rate(&curve(&a), &curve(&b)).unwrap(),
            bd_rate(&curve(&b), &curve(&a)).unwrap(),
        );
        assert!((ab + ba).abs() <= 0.05, "{ab} vs {ba}");
    }
}

#[test]
fn invalid_curves_are_rejected() {
    let a = curve(&[(100.0, 30.0), (180.0, 33.0), (350.0, 36.5), (700.0, 39.0)]);
    let far = curve(&[(100.0, 50.0), (180.0, 53.0), (350.0, 56.5), (700.0, 59.0)]);
    assert!(bd_rate(&a, &far).is_err());
    assert!(bd_rate(&a[..3], &a).is_err());
    let non_monotone = curve(&[(100.0, 30.0), (180.0, 29.0), (350.0, 36.5), (700.0, 39.0)]);
    assert!(bd_rate(&non_monotone, &a).is_err());
}
