//! MV visualisation, temporal information and Bjøntegaard delta rate.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::frame::Frame;
use crate::mv::{MvField, RefDir};

/// 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    /// Binary PPM (P6) encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }
}

/// HSV (hue in degrees, saturation and value in `[0, 1]`) to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to8 = |t: f64| ((t + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [to8(r), to8(g), to8(b)]
}

/// Hue of an MV in degrees, `atan2(u, v)` mapped to `[0, 360)`.
pub fn mv_hue(u: f64, v: f64) -> f64 {
    u.atan2(v).to_degrees().rem_euclid(360.0)
}

/// Colour-codes one reference plane of an MV field, one pixel per block
/// (or `scale x scale` pixels when `scale > 1`). Hue encodes direction,
/// saturation the magnitude relative to the largest in the image (at least 1).
pub fn visualize_mv(field: &MvField, dir: RefDir, scale: usize) -> RgbImage {
    let scale = scale.max(1);
    let mut max_mag: f64 = 1.0;
    for r in 0..field.rows {
        for c in 0..field.cols {
            let (u, v) = field.mv(r, c, dir);
            max_mag = max_mag.max(f64::from(u).hypot(f64::from(v)));
        }
    }
    let (w, h) = (field.cols * scale, field.rows * scale);
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = field.mv(y / scale, x / scale, dir);
            let (u, v) = (f64::from(u), f64::from(v));
            let mag = u.hypot(v);
            pixels.push(hsv_to_rgb(mv_hue(u, v), mag / max_mag, 1.0));
        }
    }
    RgbImage {
        width: w,
        height: h,
        pixels,
    }
}

/// Maximum over consecutive frame pairs of the (population) standard
/// deviation of their difference.
pub fn temporal_information(frames: &[Frame]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(invalid(
            "temporal_information",
            format!("need at least 2 frames, got {}", frames.len()),
        ));
    }
    let mut ti: f64 = 0.0;
    for pair in frames.windows(2) {
        pair[0].same_dims(&pair[1], "temporal_information")?;
        let diff: Vec<f64> = pair[1]
            .data()
            .iter()
            .zip(pair[0].data())
            .map(|(&b, &a)| f64::from(b) - f64::from(a))
            .collect();
        let n = diff.len() as f64;
        let mean = diff.iter().sum::<f64>() / n;
        let var = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        ti = ti.max(var.sqrt());
    }
    Ok(ti)
}

/// One rate-distortion point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub bitrate: f64,
    pub quality: f64,
}

/// Least-squares cubic `ln(rate) = c0 + c1 q + c2 q^2 + c3 q^3`.
fn fit_log_rate(curve: &[RdPoint]) -> Result<[f64; 4]> {
    let a = DMatrix::from_fn(curve.len(), 4, |i, j| curve[i].quality.powi(j as i32));
    let b = DVector::from_iterator(curve.len(), curve.iter().map(|p| p.bitrate.ln()));
    let svd = a.svd(true, true);
    let x = svd
        .solve(&b, 1e-12)
        .map_err(|e| invalid("bd_rate", format!("cubic fit failed: {e}")))?;
    Ok([x[0], x[1], x[2], x[3]])
}

fn integral(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let prim = |q: f64| c[0] * q + c[1] * q * q / 2.0 + c[2] * q.powi(3) / 3.0 + c[3] * q.powi(4) / 4.0;
    prim(hi) - prim(lo)
}

fn check_curve(curve: &[RdPoint], name: &str) -> Result<(f64, f64)> {
    if curve.len() < 4 {
        return Err(invalid(
            "bd_rate",
            format!("curve {name} has {} points, need at least 4", curve.len()),
        ));
    }
    let mut pts = curve.to_vec();
    if pts
        .iter()
        .any(|p| !(p.bitrate > 0.0) || !p.quality.is_finite() || !p.bitrate.is_finite())
    {
        return Err(invalid(
            "bd_rate",
            format!("curve {name} needs positive finite rates and finite qualities"),
        ));
    }
    pts.sort_by(|a, b| a.bitrate.total_cmp(&b.bitrate));
    if pts
        .windows(2)
        .any(|w| !(w[1].quality > w[0].quality) || w[1].bitrate == w[0].bitrate)
    {
        return Err(invalid(
            "bd_rate",
            format!("quality of curve {name} is not strictly increasing in rate"),
        ));
    }
    Ok((pts[0].quality, pts[pts.len() - 1].quality))
}

/// Average bitrate difference of `b` relative to `a` at equal quality, in
/// percent, over the overlapping quality interval.
pub fn bd_rate(a: &[RdPoint], b: &[RdPoint]) -> Result<f64> {
    let (alo, ahi) = check_curve(a, "a")?;
    let (blo, bhi) = check_curve(b, "b")?;
    let (lo, hi) = (alo.max(blo), ahi.min(bhi));
    if !(hi > lo) {
        return Err(invalid(
            "bd_rate",
            format!("no quality overlap: [{alo}, {ahi}] vs [{blo}, {bhi}]"),
        ));
    }
    let (pa, pb) = (fit_log_rate(a)?, fit_log_rate(b)?);
    let avg = (integral(&pb, lo, hi) - integral(&pa, lo, hi)) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}
