mod common;

use cbtnet_core::blockmatch::*;
use cbtnet_core::triplet::FrameTriplet;
use cbtnet_core::{Frame, Mv, RefDir, BLOCK_SIZES};
use common::*;

#[test]
fn sad_examples() {
    assert_eq!(sad(&[3.0; 64], &[3.0; 64]).unwrap(), 0.0);
    assert_eq!(sad(&[0.0; 64], &[1.0; 64]).unwrap(), 64.0);
    let mut r = rng(1);
    let (a, b) = (noise_frame(8, 8, &mut r), noise_frame(8, 8, &mut r));
    let direct: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| f64::from((x - y).abs()))
        .sum();
    assert_eq!(sad(a.data(), b.data()).unwrap(), direct);
    assert!(sad(&[0.0; 3], &[0.0; 4]).is_err());
}

#[test]
fn static_scene_gives_zero_mvs() {
    let mut r = rng(2);
    let f = texture_frame(64, 64, &mut r);
    for algo in [Algorithm::Es, Algorithm::Ds, Algorithm::Arps] {
        let res = search(algo, &f, &f, &SearchSpec::new(8, 4)).unwrap();
        assert!(res.field.mvs.iter().all(|&m| m == Mv::ZERO), "{algo:?}");
        assert!(res.sad.iter().all(|&s| s == 0.0));
    }
}

#[test]
fn es_matches_naive_search() {
    let mut r = rng(3);
    for _ in 0..5 {
        let cur = noise_frame(16, 16, &mut r);
        let rf = noise_frame(16, 16, &mut r);
        let res = es_search(&cur, &rf, &SearchSpec::new(8, 2)).unwrap();
        let oracle = naive_es(&cur, &rf, 8, 2);
        for (i, (mv, s)) in oracle.iter().enumerate() {
            assert_eq!(res.field.mvs[i], *mv);
            assert_eq!(res.sad[i], *s);
        }
    }
}

#[test]
fn es_recovers_global_translation_on_interior_blocks() {
    let mut r = rng(4);
    let rf = texture_frame(64, 64, &mut r);
    let cur = shifted(&rf, 3, -2);
    let res = es_search(&cur, &rf, &SearchSpec::new(8, 4)).unwrap();
    for br in 1..7 {
        for bc in 1..7 {
            let i = br * 8 + bc;
            assert_eq!(res.field.mvs[i], Mv::new(3, -2), "block ({br},{bc})");
            assert_eq!(res.sad[i], 0.0);
        }
    }
}

#[test]
fn ds_recovers_small_shift() {
    let mut r = rng(5);
    let rf = texture_frame(64, 64, &mut r);
    let cur = shifted(&rf, 1, 1);
    let res = ds_search(&cur, &rf, &SearchSpec::new(8, 4)).unwrap();
    for br in 1..7 {
        for bc in 1..7 {
            assert_eq!(res.field.get(br, bc), Mv::new(1, 1));
        }
    }
}

#[test]
fn arps_propagates_global_shift() {
    let mut r = rng(6);
    let rf = texture_frame(64, 64, &mut r);
    let cur = shifted(&rf, 2, 3);
    let res = arps_search(&cur, &rf, &SearchSpec::new(8, 8)).unwrap();
    for br in 1..7 {
        for bc in 1..7 {
            assert_eq!(res.field.get(br, bc), Mv::new(2, 3), "block ({br},{bc})");
        }
    }
}

#[test]
fn fast_searches_never_beat_exhaustive() {
    let mut r = rng(7);
    for _ in 0..100 {
        let rf = texture_frame(32, 32, &mut r);
        let cur = shifted(&noise_blend(&rf, &mut r), 1, -1);
        let spec = SearchSpec::new(8, 4);
        let es = es_search(&cur, &rf, &spec).unwrap();
        let ds = ds_search(&cur, &rf, &spec).unwrap();
        let arps = arps_search(&cur, &rf, &spec).unwrap();
        for i in 0..es.sad.len() {
            assert!(es.sad[i] <= ds.sad[i]);
            assert!(es.sad[i] <= arps.sad[i]);
        }
        // Fast searches stay within the window.
        for m in ds.field.mvs.iter().chain(&arps.field.mvs) {
            assert!(m.u.abs() <= 4 && m.v.abs() <= 4);
        }
    }
}

fn noise_blend(f: &Frame, r: &mut impl rand::Rng) -> Frame {
    Frame::from_fn(f.width(), f.height(), |y, x| {
        (f.get(y, x) + r.gen_range(-6.0..6.0f32)).round().clamp(0.0, 255.0)
    })
}

#[test]
fn invalid_specs_are_rejected() {
    let f = Frame::filled(64, 64, 0.0);
    assert!(es_search(&f, &f, &SearchSpec::new(12, 4)).is_err());
    assert!(es_search(&f, &f, &SearchSpec::new(8, 0)).is_err());
    assert!(es_search(&f, &Frame::filled(64, 32, 0.0), &SearchSpec::new(8, 4)).is_err());
    assert!("hexagon".parse::<Algorithm>().is_err());
    assert_eq!("arps".parse::<Algorithm>().unwrap(), Algorithm::Arps);
}

#[test]
fn zero_motion_triplet_yields_zero_field_set() {
    let mut r = rng(8);
    let f = texture_frame(64, 64, &mut r);
    let t = FrameTriplet::unpadded(f.clone(), f.clone(), f, 4).unwrap();
    for algo in [Algorithm::Es, Algorithm::Ds, Algorithm::Arps] {
        let run = run_baseline(&t, algo, &BLOCK_SIZES, 8).unwrap();
        assert!(run.mvs.fields.iter().all(|fl| fl.data.iter().all(|&v| v == 0.0)));
        assert_eq!(run.invocations.len(), 8);
    }
}

#[test]
fn baseline_fills_both_references() {
    let mut r = rng(9);
    let q = texture_frame(64, 64, &mut r);
    let t = FrameTriplet::unpadded(shifted(&q, 0, -2), q.clone(), shifted(&q, 0, 2), 4).unwrap();
    let run = run_baseline(&t, Algorithm::Es, &[16], 4).unwrap();
    let f = run.mvs.field(16).unwrap();
    assert_eq!(f.mv(1, 1, RefDir::Past), (0.0, 2.0));
    assert_eq!(f.mv(1, 1, RefDir::Future), (0.0, -2.0));
    // Sizes not requested stay zero.
    assert!(run.mvs.field(8).unwrap().data.iter().all(|&v| v == 0.0));
    let shares = run.time_shares();
    assert_eq!(shares.len(), 1);
    assert!((shares[0].1 - 1.0).abs() < 1e-12);
}

#[test]
fn ds_time_is_dominated_by_small_blocks() {
    let mut r = rng(10);
    let q = texture_frame(1024, 512, &mut r);
    let t = FrameTriplet::unpadded(shifted(&q, 2, 5), q.clone(), shifted(&q, -2, -5), 4).unwrap();
    let runs: Vec<_> = (0..5)
        .map(|_| run_baseline(&t, Algorithm::Ds, &BLOCK_SIZES, 32).unwrap())
        .collect();
    let get = |s: usize| {
        let mut v: Vec<f64> = runs
            .iter()
            .map(|r| r.time_shares().iter().find(|x| x.0 == s).unwrap().1)
            .collect();
        v.sort_by(f64::total_cmp);
        v[2]
    };
    let shares: Vec<f64> = BLOCK_SIZES.iter().map(|&s| get(s)).collect();
    assert!(get(8) > get(16) && get(16) > get(32).max(get(64)), "{shares:?}");
    // 32 and 64 tie: four times the probes at a quarter of the area.
    let work = |s: usize| -> u64 {
        runs[0]
            .invocations
            .iter()
            .filter(|i| i.block_size == s)
            .map(|i| i.probes * (s * s) as u64)
            .sum()
    };
    let ratio = work(32) as f64 / work(64) as f64;
    assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
}
