//! Reference implementations used as oracles by the integration tests.
#![allow(dead_code)]

use cbtnet_core::{Frame, IntMvField, Mv};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Integer-valued uniform noise in `0..=255`.
pub fn noise_frame(w: usize, h: usize, rng: &mut impl Rng) -> Frame {
    Frame::from_fn(w, h, |_, _| rng.gen_range(0..=255u8) as f32)
}

/// Box-smoothed integer noise; has enough local structure for block search.
pub fn texture_frame(w: usize, h: usize, rng: &mut impl Rng) -> Frame {
    let raw: Vec<f32> = (0..(w + 4) * (h + 4))
        .map(|_| rng.gen_range(0..=255u8) as f32)
        .collect();
    Frame::from_fn(w, h, |y, x| {
        let mut s = 0.0;
        for dy in 0..5 {
            for dx in 0..5 {
                s += raw[(y + dy) * (w + 4) + x + dx];
            }
        }
        (s / 25.0).round()
    })
}

/// `out(y, x) = src(y + dy, x + dx)` with clamped reads.
pub fn shifted(src: &Frame, dy: i32, dx: i32) -> Frame {
    Frame::from_fn(src.width(), src.height(), |y, x| {
        src.get_clamped(y as isize + dy as isize, x as isize + dx as isize)
    })
}

fn pixel_clamped(f: &Frame, y: i64, x: i64) -> f32 {
    let yy = y.max(0).min(f.height() as i64 - 1) as usize;
    let xx = x.max(0).min(f.width() as i64 - 1) as usize;
    f.data()[yy * f.width() + xx]
}

/// Exhaustive search with plain nested loops. Ties go to the smallest
/// `(|u|+|v|, u, v)`.
pub fn naive_es(cur: &Frame, reference: &Frame, s: usize, range: i32) -> Vec<(Mv, f64)> {
    let mut out = Vec::new();
    for by in (0..cur.height()).step_by(s) {
        for bx in (0..cur.width()).step_by(s) {
            let mut best: Option<(f64, i32, i32, i32)> = None;
            for u in -range..=range {
                for v in -range..=range {
                    let mut total = 0.0f64;
                    for y in 0..s {
                        for x in 0..s {
                            let c = cur.data()[(by + y) * cur.width() + bx + x];
                            let r = pixel_clamped(reference, (by + y) as i64 + u as i64, (bx + x) as i64 + v as i64);
                            total += f64::from((c - r).abs());
                        }
                    }
                    let key = (total, u.abs() + v.abs(), u, v);
                    if best.map_or(true, |b| key < b) {
                        best = Some(key);
                    }
                }
            }
            let b = best.unwrap();
            out.push((Mv::new(b.2, b.3), b.0));
        }
    }
    out
}

/// Prediction by explicit per-block copying with border clamp.
pub fn block_copy(reference: &Frame, field: &IntMvField) -> Frame {
    let s = field.block_size;
    let mut out = Frame::filled(reference.width(), reference.height(), 0.0);
    for r in 0..field.rows {
        for c in 0..field.cols {
            let mv = field.get(r, c);
            for y in r * s..(r + 1) * s {
                let row: Vec<f32> = (c * s..(c + 1) * s)
                    .map(|x| pixel_clamped(reference, y as i64 + mv.u as i64, x as i64 + mv.v as i64))
                    .collect();
                out.data_mut()[y * reference.width() + c * s..y * reference.width() + (c + 1) * s]
                    .copy_from_slice(&row);
            }
        }
    }
    out
}

fn gaussian_window() -> Vec<Vec<f64>> {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let total: f64 = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).sum();
    g.iter().map(|a| g.iter().map(|b| a * b / total).collect()).collect()
}

/// Mean luminance-contrast-structure map and mean contrast-structure map,
/// computed window by window.
fn direct_ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let win = gaussian_window();
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let (mut ssim_sum, mut cs_sum, mut n) = (0.0, 0.0, 0usize);
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = win[i][j];
                    ma += k * a[(y + i) * w + x + j];
                    mb += k * b[(y + i) * w + x + j];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = win[i][j];
                    let da = a[(y + i) * w + x + j] - ma;
                    let db = b[(y + i) * w + x + j] - mb;
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            let cs = (2.0 * cov + c2) / (va + vb + c2);
            let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            ssim_sum += l * cs;
            cs_sum += cs;
            n += 1;
        }
    }
    (ssim_sum / n as f64, cs_sum / n as f64)
}

fn halve(a: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = 0.25
                * (a[2 * y * w + 2 * x]
                    + a[2 * y * w + 2 * x + 1]
                    + a[(2 * y + 1) * w + 2 * x]
                    + a[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    out
}

/// Multi-scale SSIM from explicit windows: contrast-structure at the finer
/// scales, full SSIM at the coarsest, weights renormalised over the scales
/// that fit an 11x11 window.
pub fn direct_ms_ssim(a: &Frame, b: &Frame) -> f64 {
    let weights = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let (mut h, mut w) = (a.height(), a.width());
    let mut m = 0;
    while m < 5 && (h.min(w) >> m) >= 11 {
        m += 1;
    }
    let wsum: f64 = weights[..m].iter().sum();
    let mut pa: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let mut pb: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let mut out = 1.0;
    for j in 0..m {
        let (s, cs) = direct_ssim_terms(&pa, &pb, h, w);
        let term = if j == m - 1 { s } else { cs };
        if term <= 0.0 {
            return 0.0;
        }
        out *= term.powf(weights[j] / wsum);
        pa = halve(&pa, h, w);
        pb = halve(&pb, h, w);
        h /= 2;
        w /= 2;
    }
    out
}

/// Least-squares cubic through `(x, y)` via normal equations and Gaussian
/// elimination; coefficients in ascending order.
fn cubic_fit(x: &[f64], y: &[f64]) -> [f64; 4] {
    let mut m = [[0.0f64; 5]; 4];
    for (&xi, &yi) in x.iter().zip(y) {
        let p = [1.0, xi, xi * xi, xi * xi * xi];
        for r in 0..4 {
            for c in 0..4 {
                m[r][c] += p[r] * p[c];
            }
            m[r][4] += p[r] * yi;
        }
    }
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..5 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    [
        m[0][4] / m[0][0],
        m[1][4] / m[1][1],
        m[2][4] / m[2][2],
        m[3][4] / m[3][3],
    ]
}

/// Bjøntegaard rate difference with trapezoid integration of the fitted
/// log-rate curves over the common quality interval.
pub fn trapezoid_bd_rate(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let fit = |c: &[(f64, f64)]| {
        let q: Vec<f64> = c.iter().map(|p| p.1).collect();
        let r: Vec<f64> = c.iter().map(|p| p.0.ln()).collect();
        cubic_fit(&q, &r)
    };
    let (fa, fb) = (fit(a), fit(b));
    let min = |c: &[(f64, f64)]| c.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max = |c: &[(f64, f64)]| c.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (min(a).max(min(b)), max(a).min(max(b)));
    let ev = |c: &[f64; 4], x: f64| c[0] + x * (c[1] + x * (c[2] + x * c[3]));
    let n = 20_000;
    let step = (hi - lo) / n as f64;
    let mut area = 0.0;
    for i in 0..n {
        let (x0, x1) = (lo + i as f64 * step, lo + (i + 1) as f64 * step);
        let d0 = ev(&fb, x0) - ev(&fa, x0);
        let d1 = ev(&fb, x1) - ev(&fa, x1);
        area += 0.5 * (d0 + d1) * step;
    }
    ((area / (hi - lo)).exp() - 1.0) * 100.0
}

/// Triplets found by scanning every frame of a segment as a candidate anchor,
/// accepting one when the triplet fits and it lies at least `2d + delta`
/// frames after the previously accepted anchor.
pub fn enumerate_triplets(n: usize, d: usize, delta: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut next_free = 0usize;
    for a in 0..n {
        if a < next_free || a + 2 * d >= n {
            continue;
        }
        out.push((a, a + d, a + 2 * d));
        next_free = a + 2 * d + delta;
    }
    out
}
