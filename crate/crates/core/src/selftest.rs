//! Built-in verification suites run by `selftest`.
//!
//! Each suite compares the production code with a finite-difference check or
//! a small direct implementation, on random inputs from a fixed seed.

use std::time::Instant;

use cbt_tensor::ops::*;
use cbt_tensor::{finite_diff_check, GradCheckConfig, GradCheckReport, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{bd_rate, RdPoint};
use crate::blockmatch::{arps_search, block_sad, ds_search, es_search, SearchSpec};
use crate::dataset::{extract_triplets, LayerSpec};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::model::{forward, CbtNet, CbtNetConfig, FEATURE_SCOPE};
use crate::mv::{IntMvField, Mv, MvFieldSet, BLOCK_SIZES};
use crate::mvcodec::{
    assemble_superblocks, decode_mv_file, encode_mv_file, pack_mv, quantize_fields, scatter_superblocks, unpack_mv,
    MvFileHeader, QuarterPelMv,
};
use crate::quality::{cbt_loss, ms_ssim, ms_ssim_op, MsSsimParams};
use crate::synthetic::{aperture_report, translation_corpus, MovingObject};
use crate::training::{train, TrainConfig};
use crate::triplet::{stack_frames, stack_inputs, FrameTriplet};
use crate::warp::{bilinear_sample, predict_frames, predict_frames_graph};

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn run(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    let t0 = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    SuiteResult {
        name,
        passed,
        detail,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn uniform(dims: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("dims")
}

/// Values with magnitude in `[0.05, 1]`, away from the ReLU kink.
fn off_kink(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(dims, data).expect("dims")
}

fn untensor(e: Error) -> cbt_tensor::TensorError {
    match e {
        Error::Tensor(t) => t,
        other => cbt_tensor::TensorError::InvalidArgument {
            op: "selftest",
            reason: other.to_string(),
        },
    }
}

/// Random integer-valued frame.
fn noise(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Frame {
    Frame::from_fn(w, h, |_, _| f32::from(rng.gen_range(0..=255u8)))
}

fn shift_frame(f: &Frame, dy: i32, dx: i32) -> Frame {
    Frame::from_fn(f.width(), f.height(), |y, x| {
        f.get_clamped(y as isize + dy as isize, x as isize + dx as isize)
    })
}

/// Finite-difference checks of every differentiable operation in 64-bit mode.
pub fn gradients() -> SuiteResult {
    run("gradients", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = GradCheckConfig::default();
        let mut checks: Vec<(&str, GradCheckReport, f64)> = Vec::new();

        let spec = ConvSpec::square(3, 2, 2, 3);
        let inputs = [
            uniform(&[2, 2, 6, 6], -1.0, 1.0, &mut rng),
            uniform(&spec.weight_dims(), -0.5, 0.5, &mut rng),
            uniform(&[3], -0.1, 0.1, &mut rng),
        ];
        checks.push((
            "conv2d",
            finite_diff_check(&inputs, &base, |g, v| conv2d(g, v[0], v[1], v[2], &spec))?,
            1e-4,
        ));

        let up = ConvTransposeSpec::upsample2x(3, 2);
        let inputs = [
            uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut rng),
            uniform(&up.weight_dims(), -0.5, 0.5, &mut rng),
            uniform(&[2], -0.1, 0.1, &mut rng),
        ];
        checks.push((
            "conv_transpose2d",
            finite_diff_check(&inputs, &base, |g, v| conv_transpose2d(g, v[0], v[1], v[2], &up))?,
            1e-4,
        ));

        let inputs = [
            uniform(&[2, 3, 3, 3], -2.0, 2.0, &mut rng),
            uniform(&[3], 0.5, 1.5, &mut rng),
            uniform(&[3], -0.5, 0.5, &mut rng),
        ];
        checks.push((
            "batch_norm",
            finite_diff_check(&inputs, &base, |g, v| {
                let mut st = BatchNormState::new(3);
                batch_norm(g, v[0], v[1], v[2], &mut st, NormMode::Train)
            })?,
            1e-4,
        ));

        let inputs = [off_kink(&[1, 2, 4, 4], &mut rng)];
        checks.push(("relu", finite_diff_check(&inputs, &base, |g, v| relu(g, v[0]))?, 1e-4));

        let inputs = [
            uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut rng),
            uniform(&[2, 1, 3, 3], -1.0, 1.0, &mut rng),
        ];
        checks.push((
            "concat",
            finite_diff_check(&inputs, &base, |g, v| concat_channels(g, &[v[0], v[1]]))?,
            1e-4,
        ));

        let mut t = uniform(&[1, 1, 5, 5], -2.0, 2.0, &mut rng);
        for v in t.data_mut() {
            if (v.abs() - 1.0).abs() < 0.05 {
                *v *= 0.5;
            }
        }
        checks.push((
            "clamp",
            finite_diff_check(&[t], &base, |g, v| clamp(g, v[0], -1.0, 1.0))?,
            1e-4,
        ));

        let inputs = [uniform(&[2, 2, 2, 3], -1.0, 1.0, &mut rng)];
        checks.push((
            "upsample_nearest",
            finite_diff_check(&inputs, &base, |g, v| upsample_nearest(g, v[0], 2))?,
            1e-4,
        ));

        let (h, w) = (6, 7);
        let src = uniform(&[2, 1, h, w], 0.0, 10.0, &mut rng);
        let mut grid = Vec::new();
        for _ in 0..2 {
            for lim in [h, w] {
                for _ in 0..h * w {
                    grid.push(rng.gen_range(0..lim - 1) as f64 + rng.gen_range(0.1..0.9));
                }
            }
        }
        let grid = Tensor::from_vec(&[2, 2, h, w], grid)?;
        checks.push((
            "bilinear_sample",
            finite_diff_check(&[src, grid], &base, |g, v| bilinear_sample(g, v[0], v[1]))?,
            1e-4,
        ));

        let a = uniform(&[2, 1, 24, 22], 60.0, 200.0, &mut rng);
        let b = Tensor::from_vec(
            a.dims(),
            a.data().iter().map(|v| v + rng.gen_range(-30.0..30.0)).collect(),
        )?;
        let p = MsSsimParams::default();
        let cfg = GradCheckConfig {
            h: 1e-2,
            wrt: Some(vec![1]),
            denominator_floor: 1e-6,
            ..base.clone()
        };
        checks.push((
            "ms_ssim",
            finite_diff_check(&[a, b], &cfg, |g, v| ms_ssim_op(g, v[0], v[1], &p))?,
            1e-4,
        ));

        // Model -> warp -> loss on 64x64 toy inputs.
        let model = CbtNet::<f32>::new(CbtNetConfig::toy(), 2)?.cast::<f64>();
        let ts: Vec<FrameTriplet> = (0..4)
            .map(|_| {
                let q = crate::synthetic::smooth_texture(64, 64, 2.0, &mut rng);
                FrameTriplet::unpadded(shift_frame(&q, -2, 1), q.clone(), shift_frame(&q, 2, -1), 4)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&FrameTriplet> = ts.iter().collect();
        let input = stack_inputs(&refs)?.cast::<f64>();
        let frames = |sel: fn(&FrameTriplet) -> &Frame| -> Result<Tensor<f64>> {
            Ok(stack_frames(&refs.iter().map(|t| sel(t)).collect::<Vec<_>>())?.cast::<f64>())
        };
        let (past, q, future) = (frames(|t| &t.past)?, frames(|t| &t.q)?, frames(|t| &t.future)?);
        let params: Vec<Tensor<f64>> = model.params.iter().map(|(_, t)| t.clone()).collect();
        let cfg = GradCheckConfig {
            h: 1e-6,
            max_coords_per_input: Some(3),
            denominator_floor: 1e-3,
            ..base
        };
        let rep = finite_diff_check(&params, &cfg, |g, v| {
            let mut bn = model.bn.clone();
            let x = g.constant(input.clone());
            let outs = forward(&model.config, &mut bn, g, v, x, NormMode::Train).map_err(untensor)?;
            let refs = [g.constant(past.clone()), g.constant(future.clone())];
            let preds = predict_frames_graph(g, refs, &outs)?;
            let qv = g.constant(q.clone());
            Ok(cbt_loss(g, qv, &preds, 64, 64, &p)?.loss)
        })?;

        let mut ok = true;
        let mut detail = Vec::new();
        for (name, r, tol) in &checks {
            ok &= r.max_rel_error <= *tol;
            detail.push(format!("{name} {:.1e}", r.max_rel_error));
        }
        let frac = rep.fraction_within(1e-3);
        ok &= frac >= 0.99;
        detail.push(format!("model+warp+loss {:.1}% within 1e-3", 100.0 * frac));
        Ok((ok, detail.join(", ")))
    })
}

fn block_copy(reference: &Frame, field: &IntMvField) -> Frame {
    let s = field.block_size;
    Frame::from_fn(reference.width(), reference.height(), |y, x| {
        let m = field.get(y / s, x / s);
        reference.get_clamped(y as isize + m.u as isize, x as isize + m.v as isize)
    })
}

/// Integer MV fields through the differentiable warp versus direct block copies.
pub fn warp_oracle(cases: usize) -> SuiteResult {
    run("warp-oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (w, h) = (128, 128);
        let mut mismatches = 0;
        for _ in 0..cases {
            let t = FrameTriplet::unpadded(noise(w, h, &mut rng), noise(w, h, &mut rng), noise(w, h, &mut rng), 4)?;
            let fields: [(IntMvField, IntMvField); 4] = std::array::from_fn(|i| {
                let s = BLOCK_SIZES[i];
                let mut pair = (IntMvField::zeros(s, h / s, w / s), IntMvField::zeros(s, h / s, w / s));
                for f in [&mut pair.0, &mut pair.1] {
                    for m in &mut f.mvs {
                        *m = Mv::new(rng.gen_range(-20..=20), rng.gen_range(-20..=20));
                    }
                }
                pair
            });
            let set = MvFieldSet::from_int(w, h, &fields)?;
            let preds = predict_frames(&t, &set)?;
            for (si, (fp, ff)) in fields.iter().enumerate() {
                mismatches += usize::from(preds.frames[0][si] != block_copy(&t.past, fp));
                mismatches += usize::from(preds.frames[1][si] != block_copy(&t.future, ff));
            }
        }
        let t = FrameTriplet::unpadded(noise(w, h, &mut rng), noise(w, h, &mut rng), noise(w, h, &mut rng), 4)?;
        let zero = predict_frames(&t, &MvFieldSet::zeros(w, h)?)?;
        let identity = zero.frames[0].iter().all(|f| *f == t.past) && zero.frames[1].iter().all(|f| *f == t.future);
        Ok((
            mismatches == 0 && identity,
            format!("{cases} fields x 8 predictions, {mismatches} mismatches, zero-MV identity {identity}"),
        ))
    })
}

/// ES against a naive search, and ES <= DS, ARPS per block.
pub fn search_oracles(pairs: usize) -> SuiteResult {
    run("search-oracles", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = SearchSpec::new(8, 4);
        let (mut es_naive, mut ds_viol, mut arps_viol, mut lost) = (0, 0, 0, 0);
        for _ in 0..pairs {
            let cur = noise(64, 64, &mut rng);
            let reference = noise(64, 64, &mut rng);
            let es = es_search(&cur, &reference, &spec)?;
            let ds = ds_search(&cur, &reference, &spec)?;
            let arps = arps_search(&cur, &reference, &spec)?;
            for i in 0..es.sad.len() {
                let (by, bx) = ((i / 8) * 8, (i % 8) * 8);
                let mut best = f64::INFINITY;
                for u in -4..=4 {
                    for v in -4..=4 {
                        best = best.min(block_sad(&cur, &reference, by, bx, 8, Mv::new(u, v)));
                    }
                }
                es_naive += usize::from(es.sad[i] != best);
                ds_viol += usize::from(es.sad[i] > ds.sad[i]);
                arps_viol += usize::from(es.sad[i] > arps.sad[i]);
            }
            let (dy, dx) = (rng.gen_range(-4..=4), rng.gen_range(-4..=4));
            let moved = shift_frame(&reference, -dy, -dx);
            let found = es_search(&moved, &reference, &spec)?;
            for r in 1..7 {
                for c in 1..7 {
                    lost += usize::from(found.field.get(r, c) != Mv::new(-dy, -dx));
                }
            }
        }
        Ok((
            es_naive + ds_viol + arps_viol + lost == 0,
            format!(
                "{pairs} pairs: ES/naive mismatches {es_naive}, ES>DS {ds_viol}, ES>ARPS {arps_viol}, translations missed {lost}"
            ),
        ))
    })
}

/// Quarter-pel packing, superblock assembly and the file round trip.
pub fn mv_codec() -> SuiteResult {
    run("mv-codec", || {
        let mut bad = 0usize;
        for a in -508..=508 {
            for b in [-508, -1, 0, 1, 508, a] {
                let q = QuarterPelMv { u_q4: a, v_q4: b };
                bad += usize::from(unpack_mv(pack_mv(q)?) != q);
                let q = QuarterPelMv { u_q4: b, v_q4: a };
                bad += usize::from(unpack_mv(pack_mv(q)?) != q);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, h) = (192, 128);
        let mut set = MvFieldSet::zeros(w, h)?;
        for f in &mut set.fields {
            let [rows, cols, _] = f.dims();
            for r in 0..rows {
                for c in 0..cols {
                    for ch in 0..4 {
                        f.set(r, c, ch, rng.gen_range(-127.0..127.0));
                    }
                }
            }
        }
        let quantized = quantize_fields(&set)?;
        let packed = assemble_superblocks(&set)?;
        let scatter_ok = scatter_superblocks(&packed)? == quantized;
        let header = MvFileHeader {
            width: w as u32,
            height: h as u32,
            ordering: crate::mvcodec::ORDER_SIZE_MAJOR_RASTER,
        };
        let bytes = encode_mv_file(&header, std::slice::from_ref(&packed))?;
        let (h2, frames) = decode_mv_file(&bytes, std::path::Path::new("selftest"))?;
        let file_ok = h2 == header && frames.len() == 1 && frames[0] == packed;
        let hd = assemble_superblocks(&MvFieldSet::zeros(1920, 1088)?)?.dims();
        let ok = bad == 0 && scatter_ok && file_ok && hd == [2, 30, 17, 85];
        Ok((
            ok,
            format!("pack failures {bad}, scatter {scatter_ok}, file {file_ok}, 1920x1088 -> {hd:?}"),
        ))
    })
}

/// Closed-form triplet counts against exhaustive enumeration.
pub fn dataset_counts() -> SuiteResult {
    run("dataset-counts", || {
        let mut bad = 0;
        for layer in LayerSpec::all() {
            let d = layer.d;
            for n in 0..=200usize {
                let mut brute = 0;
                let mut next = 0;
                for a in 0..n {
                    if a >= next && a + 2 * d < n {
                        brute += 1;
                        next = a + layer.stride();
                    }
                }
                let got = extract_triplets(n, &layer);
                bad += usize::from(got.len() != brute || layer.count(n) != brute);
                bad += got.iter().filter(|t| t.1 - t.0 != d || t.2 - t.1 != d).count();
            }
        }
        Ok((bad == 0, format!("N in 0..=200, k in 1..=4: {bad} disagreements")))
    })
}

/// Identity, scaling and antisymmetry of the BD-rate.
pub fn bd_rate_checks() -> SuiteResult {
    run("bd-rate", || {
        let a: Vec<RdPoint> = [(1000.0, 0.90), (2000.0, 0.93), (4000.0, 0.955), (8000.0, 0.97)]
            .iter()
            .map(|&(bitrate, quality)| RdPoint { bitrate, quality })
            .collect();
        let scaled: Vec<RdPoint> = a
            .iter()
            .map(|p| RdPoint {
                bitrate: 1.1 * p.bitrate,
                ..*p
            })
            .collect();
        let near: Vec<RdPoint> = a
            .iter()
            .enumerate()
            .map(|(i, p)| RdPoint {
                bitrate: p.bitrate * (1.0 + 0.01 * (i as f64 - 1.5) / 1.5),
                ..*p
            })
            .collect();
        let same = bd_rate(&a, &a)?;
        let ten = bd_rate(&a, &scaled)?;
        let anti = bd_rate(&a, &near)? + bd_rate(&near, &a)?;
        let ok = same.abs() < 1e-9 && (ten - 10.0).abs() < 1e-6 && anti.abs() <= 0.05;
        Ok((
            ok,
            format!("identical {same:.2e}%, x1.10 {ten:.6}%, antisymmetry residual {anti:.4}%"),
        ))
    })
}

/// Identity and monotone decrease under additive noise.
pub fn ms_ssim_checks() -> SuiteResult {
    run("ms-ssim", || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MsSsimParams::default();
        let img = crate::synthetic::smooth_texture(256, 256, 1.5, &mut rng);
        let id = ms_ssim(&img, &img, &p)?;
        let mut scores = Vec::new();
        for sigma in [2.0, 8.0, 32.0] {
            let noisy = Frame::from_fn(256, 256, |y, x| {
                let n: f64 = rng.sample(rand_distr::StandardNormal);
                (f64::from(img.get(y, x)) + sigma * n).clamp(0.0, 255.0) as f32
            });
            scores.push(ms_ssim(&img, &noisy, &p)?);
        }
        let ok = (id - 1.0).abs() <= 1e-9 && scores.windows(2).all(|w| w[1] < w[0]) && scores[0] < id;
        Ok((ok, format!("identity {id:.12}, sigma 2/8/32 -> {scores:.4?}")))
    })
}

/// Operation counts of one forward pass.
pub fn feature_reuse() -> SuiteResult {
    run("feature-reuse", || {
        let mut model = CbtNet::<f32>::new(CbtNetConfig::toy(), 6)?;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = FrameTriplet::unpadded(
            noise(128, 64, &mut rng),
            noise(128, 64, &mut rng),
            noise(128, 64, &mut rng),
            4,
        )?;
        let mut g = Graph::new();
        let vars: Vec<Var> = model.params.iter().map(|(_, p)| g.constant(p.clone())).collect();
        let input = g.constant(stack_inputs(&[&t])?);
        let outs = model.forward_graph(&mut g, &vars, input, NormMode::Eval)?;
        let convs = g.op_count(FEATURE_SCOPE, "conv2d");
        let past_future = outs.iter().all(|&o| g.value(o).dims()[1] == 4);
        let ok = convs == 9 && past_future;
        Ok((
            ok,
            format!(
                "{convs} feature convolutions for one triplet; every stage emits past and future MVs: {past_future}"
            ),
        ))
    })
}

/// Short toy training on translated textures, used when no checkpoint is given.
pub fn quick_toy_model(steps: u64, seed: u64) -> Result<CbtNet<f32>> {
    let corpus = translation_corpus(64, 64, 8, 4.0, seed)?;
    let data: Vec<FrameTriplet> = corpus.into_iter().map(|s| s.triplet).collect();
    let cfg = TrainConfig {
        batch_size: 8,
        max_steps: steps,
        val_every: 0,
        seed,
        resolution: "64x64".into(),
        ..TrainConfig::default()
    };
    Ok(
        train(CbtNet::new(CbtNetConfig::toy(), seed)?, &data, &[], &cfg, |_| {})?
            .last
            .model,
    )
}

/// The scene used by the aperture report: a 48x48 textured object moving by
/// (4, 2) per frame over a flat noisy background.
pub fn aperture_scene() -> MovingObject {
    MovingObject::new(128, 128, 48, (30, 40), (4, 2), 7)
}

pub fn aperture(model: &CbtNet<f32>) -> SuiteResult {
    run("aperture", || {
        let r = aperture_report(model, &aperture_scene(), 1, 16)?;
        Ok((
            r.holds(),
            format!(
                "CBT 8x8 variance inside object {:.4} ({} blocks) vs ES 8x8 variance on background {:.4} ({} blocks)",
                r.cbt_object_variance, r.object_blocks, r.es_background_variance, r.background_blocks
            ),
        ))
    })
}

/// All suites; `model` feeds the aperture report (a short toy run otherwise).
pub fn run_all(model: Option<&CbtNet<f32>>) -> Vec<SuiteResult> {
    let mut out = vec![
        gradients(),
        warp_oracle(50),
        search_oracles(20),
        mv_codec(),
        dataset_counts(),
        bd_rate_checks(),
        ms_ssim_checks(),
        feature_reuse(),
    ];
    out.push(match model {
        Some(m) => aperture(m),
        None => match quick_toy_model(100, 11) {
            Ok(m) => aperture(&m),
            Err(e) => SuiteResult {
                name: "aperture",
                passed: false,
                detail: format!("toy training failed: {e}"),
                seconds: 0.0,
            },
        },
    });
    out
}
