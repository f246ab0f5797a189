//! Image quality metrics and the perceptual training loss.
//!
//! SSIM statistics are always accumulated in 64-bit arithmetic, also when
//! the surrounding graph runs in 32-bit.

use cbt_tensor::ops::{add, crop, mean};
use cbt_tensor::{Backward, Graph, Scalar, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::frame::Frame;

/// Standard five-scale weights.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Floor inside the loss logarithm.
pub const LOSS_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsSsimParams {
    /// Maximum number of scales; fewer are used when the frame is too small.
    pub scales: usize,
    pub weights: Vec<f64>,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for MsSsimParams {
    fn default() -> Self {
        Self {
            scales: 5,
            weights: MS_SSIM_WEIGHTS.to_vec(),
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

impl MsSsimParams {
    fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Scales usable on an `h x w` frame and their renormalised weights.
    pub fn effective(&self, h: usize, w: usize) -> Result<Vec<f64>> {
        if self.scales == 0 || self.weights.len() < self.scales {
            return Err(invalid(
                "ms_ssim",
                format!("{} weights for {} scales", self.weights.len(), self.scales),
            ));
        }
        let mut m = 0;
        while m < self.scales && (h.min(w) >> m) >= self.window {
            m += 1;
        }
        if m == 0 {
            return Err(invalid(
                "ms_ssim",
                format!("frame {w}x{h} smaller than the {0}x{0} window", self.window),
            ));
        }
        let total: f64 = self.weights[..m].iter().sum();
        Ok(self.weights[..m].iter().map(|w| w / total).collect())
    }

    pub fn gaussian(&self) -> Vec<f64> {
        let c = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

pub fn mad(a: &Frame, b: &Frame) -> Result<f64> {
    a.same_dims(b, "mad")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f64::from((x - y).abs()))
        .sum();
    Ok(s / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical frames.
pub fn psnr(a: &Frame, b: &Frame, peak: f64) -> Result<f64> {
    a.same_dims(b, "psnr")?;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f64::from(x - y).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &x[y * w..(y + 1) * w];
        for ox in 0..ow {
            tmp[y * ow + ox] = row[ox..ox + n].iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for (i, &kv) in k.iter().enumerate() {
            let src = &tmp[(oy + i) * ow..(oy + i + 1) * ow];
            let dst = &mut out[oy * ow..(oy + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    (out, oh, ow)
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint(g: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for oy in 0..oh {
        let src = &g[oy * ow..(oy + 1) * ow];
        for (i, &kv) in k.iter().enumerate() {
            let dst = &mut tmp[(oy + i) * ow..(oy + i + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let row = &mut out[y * w..(y + 1) * w];
        for ox in 0..ow {
            let t = tmp[y * ow + ox];
            for (i, &kv) in k.iter().enumerate() {
                row[ox + i] += kv * t;
            }
        }
    }
    out
}

/// 2x2 average pooling; a trailing odd row or column is dropped.
fn pool2(x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for xx in 0..ow {
            let i = 2 * y * w + 2 * xx;
            out.push(0.25 * (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]));
        }
    }
    (out, oh, ow)
}

fn pool2_adjoint(g: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; h * w];
    for y in 0..oh {
        for xx in 0..ow {
            let v = 0.25 * g[y * ow + xx];
            let i = 2 * y * w + 2 * xx;
            out[i] += v;
            out[i + 1] += v;
            out[i + w] += v;
            out[i + w + 1] += v;
        }
    }
    out
}

/// Local statistics of one scale.
struct Stats {
    h: usize,
    w: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    s_aa: Vec<f64>,
    s_bb: Vec<f64>,
    s_ab: Vec<f64>,
}

impl Stats {
    fn new(a: Vec<f64>, b: Vec<f64>, h: usize, w: usize, k: &[f64]) -> Self {
        let (mu_a, _, _) = filter_valid(&a, h, w, k);
        let (mu_b, _, _) = filter_valid(&b, h, w, k);
        let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
        let (e_aa, _, _) = filter_valid(&sq(&a, &a), h, w, k);
        let (e_bb, _, _) = filter_valid(&sq(&b, &b), h, w, k);
        let (e_ab, _, _) = filter_valid(&sq(&a, &b), h, w, k);
        let s_aa = e_aa.iter().zip(&mu_a).map(|(e, m)| e - m * m).collect();
        let s_bb = e_bb.iter().zip(&mu_b).map(|(e, m)| e - m * m).collect();
        let s_ab = e_ab
            .iter()
            .zip(mu_a.iter().zip(&mu_b))
            .map(|(e, (p, q))| e - p * q)
            .collect();
        Self {
            h,
            w,
            a,
            b,
            mu_a,
            mu_b,
            s_aa,
            s_bb,
            s_ab,
        }
    }

    fn cs(&self, i: usize, c2: f64) -> f64 {
        (2.0 * self.s_ab[i] + c2) / (self.s_aa[i] + self.s_bb[i] + c2)
    }

    fn l(&self, i: usize, c1: f64) -> f64 {
        (2.0 * self.mu_a[i] * self.mu_b[i] + c1) / (self.mu_a[i].powi(2) + self.mu_b[i].powi(2) + c1)
    }

    /// Mean contrast-structure term, or mean full SSIM when `with_l`.
    fn mean(&self, with_l: bool, c1: f64, c2: f64) -> f64 {
        let n = self.mu_a.len();
        let s: f64 = (0..n)
            .map(|i| {
                if with_l {
                    self.l(i, c1) * self.cs(i, c2)
                } else {
                    self.cs(i, c2)
                }
            })
            .sum();
        s / n as f64
    }

    /// Gradient of the mean term w.r.t. `b` at this scale, scaled by `up`.
    fn grad_b(&self, with_l: bool, c1: f64, c2: f64, k: &[f64], up: f64) -> Vec<f64> {
        let n = self.mu_a.len();
        let scale = up / n as f64;
        let mut g_mu = vec![0.0; n];
        let mut g_bb = vec![0.0; n];
        let mut g_ab = vec![0.0; n];
        for i in 0..n {
            let (ma, mb) = (self.mu_a[i], self.mu_b[i]);
            let big_b = self.s_aa[i] + self.s_bb[i] + c2;
            let cs = (2.0 * self.s_ab[i] + c2) / big_b;
            // Derivatives w.r.t. mu_b, E[b^2] and E[ab].
            let dcs_mu = (-2.0 * ma + 2.0 * mb * cs) / big_b;
            let dcs_bb = -cs / big_b;
            let dcs_ab = 2.0 / big_b;
            let (d_mu, d_bb, d_ab) = if with_l {
                let l2 = ma * ma + mb * mb + c1;
                let l = (2.0 * ma * mb + c1) / l2;
                let dl_mu = (2.0 * ma - 2.0 * mb * l) / l2;
                (dl_mu * cs + l * dcs_mu, l * dcs_bb, l * dcs_ab)
            } else {
                (dcs_mu, dcs_bb, dcs_ab)
            };
            g_mu[i] = scale * d_mu;
            g_bb[i] = scale * d_bb;
            g_ab[i] = scale * d_ab;
        }
        let f_mu = filter_valid_adjoint(&g_mu, self.h, self.w, k);
        let f_bb = filter_valid_adjoint(&g_bb, self.h, self.w, k);
        let f_ab = filter_valid_adjoint(&g_ab, self.h, self.w, k);
        (0..self.h * self.w)
            .map(|i| f_mu[i] + 2.0 * self.b[i] * f_bb[i] + self.a[i] * f_ab[i])
            .collect()
    }
}

/// Forward state of one MS-SSIM evaluation, kept for the gradient.
struct MsSsimEval {
    weights: Vec<f64>,
    scales: Vec<Stats>,
    /// Per-scale terms: contrast-structure means, full SSIM at the last scale.
    terms: Vec<f64>,
    value: f64,
}

fn ms_ssim_eval(a: &[f64], b: &[f64], h: usize, w: usize, p: &MsSsimParams) -> Result<MsSsimEval> {
    let weights = p.effective(h, w)?;
    let k = p.gaussian();
    let (c1, c2) = (p.c1(), p.c2());
    let m = weights.len();
    let mut scales = Vec::with_capacity(m);
    let mut terms = Vec::with_capacity(m);
    let (mut ca, mut cb, mut ch, mut cw) = (a.to_vec(), b.to_vec(), h, w);
    for j in 0..m {
        if j > 0 {
            let (pa, nh, nw) = pool2(&ca, ch, cw);
            let (pb, _, _) = pool2(&cb, ch, cw);
            ca = pa;
            cb = pb;
            ch = nh;
            cw = nw;
        }
        let st = Stats::new(ca.clone(), cb.clone(), ch, cw, &k);
        terms.push(st.mean(j == m - 1, c1, c2));
        scales.push(st);
    }
    let value = if terms.iter().any(|&t| t <= 0.0) {
        0.0
    } else {
        terms.iter().zip(&weights).map(|(t, w)| t.powf(*w)).product()
    };
    Ok(MsSsimEval {
        weights,
        scales,
        terms,
        value,
    })
}

impl MsSsimEval {
    /// Gradient of `up * value` w.r.t. the second image.
    fn grad_b(&self, p: &MsSsimParams, up: f64) -> Vec<f64> {
        let s0 = &self.scales[0];
        if self.value == 0.0 || up == 0.0 {
            return vec![0.0; s0.h * s0.w];
        }
        let k = p.gaussian();
        let (c1, c2) = (p.c1(), p.c2());
        let m = self.scales.len();
        let mut acc: Option<Vec<f64>> = None;
        for j in (0..m).rev() {
            let st = &self.scales[j];
            let d_term = up * self.value * self.weights[j] / self.terms[j];
            let mut g = st.grad_b(j == m - 1, c1, c2, &k, d_term);
            if let Some(coarser) = acc.take() {
                for (gi, ci) in g.iter_mut().zip(pool2_adjoint(&coarser, st.h, st.w)) {
                    *gi += ci;
                }
            }
            acc = Some(g);
        }
        acc.expect("at least one scale")
    }
}

fn to_f64(f: &Frame) -> Vec<f64> {
    f.data().iter().map(|&v| f64::from(v)).collect()
}

/// Single-scale SSIM: mean of the local SSIM map at full resolution.
pub fn ssim(a: &Frame, b: &Frame, p: &MsSsimParams) -> Result<f64> {
    a.same_dims(b, "ssim")?;
    let (h, w) = (a.height(), a.width());
    if h.min(w) < p.window {
        return Err(invalid(
            "ssim",
            format!("frame {w}x{h} smaller than the {0}x{0} window", p.window),
        ));
    }
    let st = Stats::new(to_f64(a), to_f64(b), h, w, &p.gaussian());
    Ok(st.mean(true, p.c1(), p.c2()))
}

pub fn ms_ssim(a: &Frame, b: &Frame, p: &MsSsimParams) -> Result<f64> {
    a.same_dims(b, "ms_ssim")?;
    Ok(ms_ssim_eval(&to_f64(a), &to_f64(b), a.height(), a.width(), p)?.value)
}

/// MS-SSIM and its gradient w.r.t. `b`.
pub fn ms_ssim_with_grad(a: &Frame, b: &Frame, p: &MsSsimParams) -> Result<(f64, Vec<f64>)> {
    a.same_dims(b, "ms_ssim")?;
    let e = ms_ssim_eval(&to_f64(a), &to_f64(b), a.height(), a.width(), p)?;
    let g = e.grad_b(p, 1.0);
    Ok((e.value, g))
}

struct MsSsimBackward {
    params: MsSsimParams,
    evals: Vec<MsSsimEval>,
}

impl<T: Scalar> Backward<T> for MsSsimBackward {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mut gb = Vec::with_capacity(inputs[1].numel());
        for (e, up) in self.evals.iter().zip(g.data()) {
            gb.extend(
                e.grad_b(&self.params, up.to_f64_lossy())
                    .into_iter()
                    .map(T::from_f64_lossy),
            );
        }
        let gb = Tensor::from_vec(inputs[1].dims(), gb).expect("gradient dims");
        vec![None, Some(gb)]
    }
}

/// Per-sample MS-SSIM between `N x 1 x H x W` batches; output has dims `[N]`.
///
/// Differentiable w.r.t. `b` only. A non-positive term at any scale yields
/// a score of 0 with zero gradient.
pub fn ms_ssim_op<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, p: &MsSsimParams) -> cbt_tensor::Result<Var> {
    let (n, c, h, w) = g.value(a).nchw("ms_ssim")?;
    if g.value(a).dims() != g.value(b).dims() || c != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "ms_ssim",
            dim: "operands".into(),
            expected: format!("{:?} with one channel", g.value(a).dims()),
            actual: format!("{:?}", g.value(b).dims()),
        });
    }
    let plane = h * w;
    let mut evals = Vec::with_capacity(n);
    for i in 0..n {
        let pa: Vec<f64> = g.value(a).data()[i * plane..(i + 1) * plane]
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        let pb: Vec<f64> = g.value(b).data()[i * plane..(i + 1) * plane]
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        let e = ms_ssim_eval(&pa, &pb, h, w, p).map_err(|e| TensorError::InvalidArgument {
            op: "ms_ssim",
            reason: e.to_string(),
        })?;
        evals.push(e);
    }
    let out = Tensor::from_vec(&[n], evals.iter().map(|e| T::from_f64_lossy(e.value)).collect())?;
    g.record(
        "ms_ssim",
        out,
        &[a, b],
        Box::new(MsSsimBackward {
            params: p.clone(),
            evals,
        }),
    )
}

/// `10 * log10(max(1 - s, eps))`.
pub fn db_term(s: f64) -> f64 {
    10.0 * (1.0 - s).max(LOSS_EPSILON).log10()
}

struct DbBackward;

impl<T: Scalar> Backward<T> for DbBackward {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let grad = inputs[0]
            .data()
            .iter()
            .zip(g.data())
            .map(|(&s, &up)| {
                let r = 1.0 - s.to_f64_lossy();
                if r > LOSS_EPSILON {
                    T::from_f64_lossy(-10.0 / (std::f64::consts::LN_10 * r) * up.to_f64_lossy())
                } else {
                    T::zero()
                }
            })
            .collect();
        vec![Some(Tensor::from_vec(inputs[0].dims(), grad).expect("gradient dims"))]
    }
}

/// Element-wise [`db_term`].
pub fn db_loss_op<T: Scalar>(g: &mut Graph<T>, s: Var) -> cbt_tensor::Result<Var> {
    let out = g.value(s).map(|v| T::from_f64_lossy(db_term(v.to_f64_lossy())));
    g.record("db", out, &[s], Box::new(DbBackward))
}

/// Training loss over the eight predictions.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    /// Batch mean of the summed dB terms.
    pub loss: Var,
    /// Per-sample MS-SSIM, `[reference][size]`, each of dims `[N]`.
    pub scores: [[Var; 4]; 2],
}

/// Sum over references and block sizes of `10 log10(max(1 - MS-SSIM, eps))`,
/// averaged over the batch. Frames are compared on the top-left
/// `valid_h x valid_w` region only.
pub fn cbt_loss<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    predictions: &[[Var; 4]; 2],
    valid_h: usize,
    valid_w: usize,
    p: &MsSsimParams,
) -> cbt_tensor::Result<LossVars> {
    let (_, _, h, w) = g.value(q).nchw("cbt_loss")?;
    let cropped = |g: &mut Graph<T>, v: Var| -> cbt_tensor::Result<Var> {
        if valid_h == h && valid_w == w {
            Ok(v)
        } else {
            crop(g, v, 0, 0, valid_h, valid_w)
        }
    };
    let qc = cropped(g, q)?;
    let mut scores = [[q; 4]; 2];
    let mut total: Option<Var> = None;
    for (c, row) in predictions.iter().enumerate() {
        for (si, &pred) in row.iter().enumerate() {
            let pc = cropped(g, pred)?;
            let s = ms_ssim_op(g, qc, pc, p)?;
            scores[c][si] = s;
            let d = db_loss_op(g, s)?;
            total = Some(match total {
                None => d,
                Some(t) => add(g, t, d)?,
            });
        }
    }
    let loss = mean(g, total.expect("eight terms"))?;
    Ok(LossVars { loss, scores })
}

/// Loss of one current frame against a full prediction set, evaluated on the
/// top-left `valid_h x valid_w` region.
pub fn cbt_loss_frames(
    q: &Frame,
    predictions: &crate::warp::PredictionSet,
    valid_h: usize,
    valid_w: usize,
    p: &MsSsimParams,
) -> Result<f64> {
    let qc = q.crop(0, 0, valid_h, valid_w)?;
    let mut total = 0.0;
    for row in &predictions.frames {
        for pred in row {
            let pc = pred.crop(0, 0, valid_h, valid_w)?;
            total += db_term(ms_ssim(&qc, &pc, p)?);
        }
    }
    Ok(total)
}
