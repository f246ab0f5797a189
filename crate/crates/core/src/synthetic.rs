//! Synthetic content with known motion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::blockmatch::{es_search, SearchSpec};
use crate::error::Result;
use crate::frame::Frame;
use crate::model::CbtNet;
use crate::mv::RefDir;
use crate::triplet::FrameTriplet;

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Gaussian-smoothed white noise with mean 128 and standard deviation 50,
/// clipped to `0..=255`.
pub fn smooth_texture<R: Rng>(width: usize, height: usize, sigma: f64, rng: &mut R) -> Frame {
    let k = gaussian_kernel(sigma);
    let r = k.len() / 2;
    let (nw, nh) = (width + 2 * r, height + 2 * r);
    let noise: Vec<f64> = (0..nw * nh).map(|_| standard_normal(rng)).collect();
    let mut tmp = vec![0.0; nh * width];
    for y in 0..nh {
        for x in 0..width {
            tmp[y * width + x] = k.iter().enumerate().map(|(i, w)| w * noise[y * nw + x + i]).sum();
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = k.iter().enumerate().map(|(i, w)| w * tmp[(y + i) * width + x]).sum();
        }
    }
    let n = out.len() as f64;
    let mean = out.iter().sum::<f64>() / n;
    let std = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-12);
    Frame::new(
        width,
        height,
        out.iter()
            .map(|v| (128.0 + 50.0 * (v - mean) / std).clamp(0.0, 255.0) as f32)
            .collect(),
    )
    .expect("texture dims")
}

/// Triplet with a known global translation.
#[derive(Debug, Clone)]
pub struct ShiftedTriplet {
    pub triplet: FrameTriplet,
    /// True `(u, v)` towards the past reference.
    pub mv_past: (i32, i32),
    /// True `(u, v)` towards the future reference.
    pub mv_future: (i32, i32),
}

/// `size x size` crops of a texture under uniform motion with `(u, v) =
/// shift`: `Q(y, x) = R_P(y + u, x + v) = R_F(y - u, x - v)`.
pub fn translation_triplet<R: Rng>(size: usize, shift: (i32, i32), sigma: f64, rng: &mut R) -> Result<ShiftedTriplet> {
    let m = shift.0.unsigned_abs().max(shift.1.unsigned_abs()) as usize;
    let canvas = smooth_texture(size + 2 * m, size + 2 * m, sigma, rng);
    let at = |dy: i32, dx: i32| canvas.crop((m as i32 + dy) as usize, (m as i32 + dx) as usize, size, size);
    let q = at(0, 0)?;
    let past = at(-shift.0, -shift.1)?;
    let future = at(shift.0, shift.1)?;
    Ok(ShiftedTriplet {
        triplet: FrameTriplet::unpadded(past, q, future, 4)?,
        mv_past: shift,
        mv_future: (-shift.0, -shift.1),
    })
}

/// Corpus of `n` translation triplets with integer shifts uniform in
/// `[-max_shift, max_shift]^2`.
pub fn translation_corpus(n: usize, size: usize, max_shift: i32, sigma: f64, seed: u64) -> Result<Vec<ShiftedTriplet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = (
                rng.gen_range(-max_shift..=max_shift),
                rng.gen_range(-max_shift..=max_shift),
            );
            translation_triplet(size, s, sigma, &mut rng)
        })
        .collect()
}

/// Square textured object over a flat, slightly noisy background, moving
/// by `velocity` pixels per frame.
#[derive(Debug, Clone)]
pub struct MovingObject {
    pub width: usize,
    pub height: usize,
    pub object_size: usize,
    /// Top-left corner of the object in frame 0.
    pub origin: (i32, i32),
    pub velocity: (i32, i32),
    pub background: f32,
    pub noise_std: f64,
    texture: Frame,
}

impl MovingObject {
    pub fn new(
        width: usize,
        height: usize,
        object_size: usize,
        origin: (i32, i32),
        velocity: (i32, i32),
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let texture = smooth_texture(object_size, object_size, 2.0, &mut rng);
        Self {
            width,
            height,
            object_size,
            origin,
            velocity,
            background: 128.0,
            noise_std: 2.0,
            texture,
        }
    }

    pub fn object_top_left(&self, t: i32) -> (i32, i32) {
        (self.origin.0 + t * self.velocity.0, self.origin.1 + t * self.velocity.1)
    }

    /// Frame `t`; background noise is seeded by `t`.
    pub fn frame(&self, t: i32) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6e01_5e00 ^ t as u64);
        let (oy, ox) = self.object_top_left(t);
        let s = self.object_size as i32;
        Frame::from_fn(self.width, self.height, |y, x| {
            let (ry, rx) = (y as i32 - oy, x as i32 - ox);
            let n = self.noise_std * standard_normal(&mut rng);
            if (0..s).contains(&ry) && (0..s).contains(&rx) {
                self.texture.get(ry as usize, rx as usize)
            } else {
                (f64::from(self.background) + n).round().clamp(0.0, 255.0) as f32
            }
        })
    }

    /// Whether the `s x s` block at `(by, bx)` of frame `t` lies inside the object.
    pub fn block_inside(&self, t: i32, by: usize, bx: usize, s: usize) -> bool {
        let (oy, ox) = self.object_top_left(t);
        let os = self.object_size as i32;
        let (by, bx, s) = (by as i32, bx as i32, s as i32);
        by >= oy && bx >= ox && by + s <= oy + os && bx + s <= ox + os
    }

    /// Whether the block does not touch the object in frame `t` or in either neighbour.
    pub fn block_background(&self, t: i32, by: usize, bx: usize, s: usize) -> bool {
        (t - 1..=t + 1).all(|tt| {
            let (oy, ox) = self.object_top_left(tt);
            let os = self.object_size as i32;
            let (by, bx, s) = (by as i32, bx as i32, s as i32);
            by + s <= oy || bx + s <= ox || by >= oy + os || bx >= ox + os
        })
    }
}

/// Median of `values` (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-block endpoint errors of the model's MVs against the known global
/// motion, both references pooled, indexed by stage (coarsest first).
pub fn endpoint_errors(model: &CbtNet<f32>, corpus: &[ShiftedTriplet]) -> Result<[Vec<f64>; 4]> {
    let mut out: [Vec<f64>; 4] = Default::default();
    for st in corpus {
        let set = model.predict(&st.triplet)?;
        for (stage, field) in set.fields.iter().enumerate() {
            let [rows, cols, _] = field.dims();
            for r in 0..rows {
                for c in 0..cols {
                    for (dir, truth) in [(RefDir::Past, st.mv_past), (RefDir::Future, st.mv_future)] {
                        let (u, v) = field.mv(r, c, dir);
                        let du = f64::from(u) - f64::from(truth.0);
                        let dv = f64::from(v) - f64::from(truth.1);
                        out[stage].push(du.hypot(dv));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// MV spread of two 8x8 fields over the moving-object scene.
#[derive(Debug, Clone, Serialize)]
pub struct ApertureReport {
    pub frame: i32,
    /// Model MV variance over blocks inside the object, averaged over the
    /// two references.
    pub cbt_object_variance: f64,
    pub object_blocks: usize,
    /// Exhaustive-search MV variance over background blocks.
    pub es_background_variance: f64,
    pub background_blocks: usize,
    pub es_range: i32,
}

impl ApertureReport {
    pub fn holds(&self) -> bool {
        self.cbt_object_variance < self.es_background_variance
    }
}

/// Sum of the per-component variances of a set of MVs.
fn mv_variance(mvs: &[(f64, f64)]) -> f64 {
    let n = mvs.len() as f64;
    if mvs.is_empty() {
        return 0.0;
    }
    let (mu, mv) = mvs.iter().fold((0.0, 0.0), |a, m| (a.0 + m.0 / n, a.1 + m.1 / n));
    mvs.iter().map(|m| (m.0 - mu).powi(2) + (m.1 - mv).powi(2)).sum::<f64>() / n
}

/// Compares the coherence of the model's 8x8 field inside the object of
/// frame `t` with exhaustive search on the flat background.
pub fn aperture_report(model: &CbtNet<f32>, scene: &MovingObject, t: i32, es_range: i32) -> Result<ApertureReport> {
    let triplet = FrameTriplet::unpadded(scene.frame(t - 1), scene.frame(t), scene.frame(t + 1), 4)?;
    let s = 8;
    let cbt = model.predict(&triplet)?;
    let field = cbt.field(s)?;
    let spec = SearchSpec::new(s, es_range);
    let es = [
        es_search(&triplet.q, &triplet.past, &spec)?.field,
        es_search(&triplet.q, &triplet.future, &spec)?.field,
    ];
    let [rows, cols, _] = field.dims();
    let (mut inside, mut background): ([Vec<(f64, f64)>; 2], [Vec<(f64, f64)>; 2]) = Default::default();
    for r in 0..rows {
        for c in 0..cols {
            if scene.block_inside(t, r * s, c * s, s) {
                for dir in RefDir::BOTH {
                    let (u, v) = field.mv(r, c, dir);
                    inside[dir.index()].push((f64::from(u), f64::from(v)));
                }
            } else if scene.block_background(t, r * s, c * s, s) {
                for (i, f) in es.iter().enumerate() {
                    let m = f.get(r, c);
                    background[i].push((f64::from(m.u), f64::from(m.v)));
                }
            }
        }
    }
    let per_ref = |sets: &[Vec<(f64, f64)>; 2]| 0.5 * (mv_variance(&sets[0]) + mv_variance(&sets[1]));
    Ok(ApertureReport {
        frame: t,
        cbt_object_variance: per_ref(&inside),
        object_blocks: inside[0].len(),
        es_background_variance: per_ref(&background),
        background_blocks: background[0].len(),
        es_range,
    })
}
