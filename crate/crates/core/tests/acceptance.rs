//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release -p cbtnet-core --test acceptance`. The
//! process exits zero once every criterion has been evaluated; the verdicts
//! are in the printed lines.

mod common;

use std::path::Path;
use std::time::Instant;

use cbt_tensor::ops::NormMode;
use cbt_tensor::{Graph, Var};
use cbtnet_core::analysis::{bd_rate, RdPoint};
use cbtnet_core::blockmatch::{arps_search, ds_search, es_search, SearchSpec};
use cbtnet_core::dataset::{extract_triplets, LayerSpec};
use cbtnet_core::model::{CbtNet, CbtNetConfig, FEATURE_SCOPE};
use cbtnet_core::mvcodec::{
    assemble_superblocks, decode_mv_file, encode_mv_file, pack_mv, quantize_fields, scatter_superblocks, unpack_mv,
    MvFileHeader, QuarterPelMv, ORDER_SIZE_MAJOR_RASTER,
};
use cbtnet_core::quality::{ms_ssim, MsSsimParams};
use cbtnet_core::selftest;
use cbtnet_core::synthetic::{endpoint_errors, median, translation_corpus};
use cbtnet_core::training::{train, TrainConfig};
use cbtnet_core::triplet::stack_inputs;
use cbtnet_core::warp::predict_frames;
use cbtnet_core::{Frame, FrameTriplet, IntMvField, Mv, MvFieldSet, BLOCK_SIZES};
use common::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn timed(id: u32, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let t0 = Instant::now();
    let (pass, detail) = f();
    let v = Verdict {
        id,
        name,
        pass,
        detail,
        seconds: t0.elapsed().as_secs_f64(),
    };
    report(&v);
    v
}

fn report(v: &Verdict) {
    println!(
        "criterion {:>2} {} {} [{:.1}s] {}",
        v.id,
        if v.pass { "PASS" } else { "FAIL" },
        v.name,
        v.seconds,
        v.detail
    );
}

fn gradient_suite() -> (bool, String) {
    let t0 = Instant::now();
    let r = selftest::gradients();
    let secs = t0.elapsed().as_secs_f64();
    (
        r.passed && secs < 120.0,
        format!("{} (runtime {secs:.1}s, limit 120s)", r.detail),
    )
}

fn random_int_field(s: usize, w: usize, h: usize, rng: &mut impl Rng) -> IntMvField {
    let mut f = IntMvField::zeros(s, h / s, w / s);
    for m in &mut f.mvs {
        *m = Mv::new(rng.gen_range(-40..=40), rng.gen_range(-40..=40));
    }
    f
}

fn warp_oracle() -> (bool, String) {
    let mut r = rng(1002);
    let (w, h) = (128, 128);
    let mut mismatches = 0;
    for _ in 0..500 {
        let t = FrameTriplet::unpadded(
            noise_frame(w, h, &mut r),
            noise_frame(w, h, &mut r),
            noise_frame(w, h, &mut r),
            4,
        )
        .unwrap();
        let fields: [(IntMvField, IntMvField); 4] = std::array::from_fn(|i| {
            let s = BLOCK_SIZES[i];
            (random_int_field(s, w, h, &mut r), random_int_field(s, w, h, &mut r))
        });
        let preds = predict_frames(&t, &MvFieldSet::from_int(w, h, &fields).unwrap()).unwrap();
        for (si, (fp, ff)) in fields.iter().enumerate() {
            mismatches += usize::from(preds.frames[0][si] != block_copy(&t.past, fp));
            mismatches += usize::from(preds.frames[1][si] != block_copy(&t.future, ff));
        }
    }
    let mut zero_bad = 0;
    for _ in 0..20 {
        let t = FrameTriplet::unpadded(
            noise_frame(w, h, &mut r),
            noise_frame(w, h, &mut r),
            noise_frame(w, h, &mut r),
            4,
        )
        .unwrap();
        let preds = predict_frames(&t, &MvFieldSet::zeros(w, h).unwrap()).unwrap();
        zero_bad += preds.frames[0].iter().filter(|f| **f != t.past).count();
        zero_bad += preds.frames[1].iter().filter(|f| **f != t.future).count();
    }
    (
        mismatches == 0 && zero_bad == 0,
        format!("500 fields x 4 sizes x 2 refs: {mismatches} mismatches; zero fields: {zero_bad} non-identical"),
    )
}

fn search_oracles() -> (bool, String) {
    let mut r = rng(1003);
    let spec = SearchSpec::new(8, 4);
    let (mut naive_bad, mut ds_v, mut arps_v, mut missed, mut interior) = (0, 0, 0, 0, 0);
    for _ in 0..100 {
        let cur = noise_frame(64, 64, &mut r);
        let reference = noise_frame(64, 64, &mut r);
        let es = es_search(&cur, &reference, &spec).unwrap();
        let ds = ds_search(&cur, &reference, &spec).unwrap();
        let arps = arps_search(&cur, &reference, &spec).unwrap();
        for (i, (mv, sad)) in naive_es(&cur, &reference, 8, 4).into_iter().enumerate() {
            naive_bad += usize::from(es.field.mvs[i] != mv || es.sad[i] != sad);
            ds_v += usize::from(es.sad[i] > ds.sad[i]);
            arps_v += usize::from(es.sad[i] > arps.sad[i]);
        }
        let (dy, dx) = (r.gen_range(-4..=4), r.gen_range(-4..=4));
        let base = texture_frame(64, 64, &mut r);
        let moved = shifted(&base, dy, dx);
        let found = es_search(&moved, &base, &spec).unwrap();
        for row in 1..7 {
            for col in 1..7 {
                interior += 1;
                missed += usize::from(found.field.get(row, col) != Mv::new(dy, dx));
            }
        }
    }
    (
        naive_bad + ds_v + arps_v + missed == 0,
        format!(
            "100 pairs: ES vs naive {naive_bad} mismatches, ES>DS {ds_v}, ES>ARPS {arps_v}; translations missed {missed}/{interior} interior blocks"
        ),
    )
}

fn toy_training() -> ((bool, String), Option<CbtNet<f32>>) {
    let t0 = Instant::now();
    let sigma = 6.0;
    let to_triplets =
        |c: Vec<cbtnet_core::synthetic::ShiftedTriplet>| c.into_iter().map(|s| s.triplet).collect::<Vec<_>>();
    let train_set = to_triplets(translation_corpus(2000, 64, 8, sigma, 51).unwrap());
    let val_set = to_triplets(translation_corpus(100, 64, 8, sigma, 52).unwrap());
    let held_out = translation_corpus(200, 64, 8, sigma, 53).unwrap();
    let cfg = TrainConfig {
        layer_k: 4,
        resolution: "64x64".into(),
        batch_size: 16,
        lr: 1e-4,
        max_steps: 2000,
        val_every: 200,
        seed: 5,
        crop: None,
        ms_ssim: MsSsimParams::default(),
    };
    let model = CbtNet::new(CbtNetConfig::default(), 5).unwrap();
    let out = match train(model, &train_set, &val_set, &cfg, |_| {}) {
        Ok(o) => o,
        Err(e) => return ((false, format!("training failed: {e}")), None),
    };
    let losses: Vec<f64> = out.history.iter().map(|r| r.loss_db).collect();
    let ma: Vec<f64> = losses.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    let falls = ma.windows(2).filter(|w| w[1] < w[0]).count();
    let strictly = !ma.is_empty() && falls == ma.len() - 1;
    let best = out.best.model;
    let epe = endpoint_errors(&best, &held_out).unwrap();
    let meds: Vec<f64> = epe.iter().map(|e| median(e)).collect();
    let secs = t0.elapsed().as_secs_f64();
    let pass = out.aborted.is_none() && strictly && meds[3] <= 1.0 && secs <= 1200.0;
    let detail = format!(
        "{} steps, params {}; (a) 20-step moving average fell on {falls}/{} steps, first {:.2} dB last {:.2} dB; \
         (b) held-out median EPE by stage {:.3?} px (checkpoint from step {}), stage 4 limit 1 px; runtime {secs:.0}s{}",
        out.history.len(),
        best.param_count(),
        ma.len().saturating_sub(1),
        ma.first().copied().unwrap_or(f64::NAN),
        ma.last().copied().unwrap_or(f64::NAN),
        meds,
        out.best.metadata.step,
        out.aborted.map(|a| format!("; aborted: {a}")).unwrap_or_default(),
    );
    ((pass, detail), Some(best))
}

fn add_noise(f: &Frame, sigma: f64, r: &mut impl Rng) -> Frame {
    let n = Normal::new(0.0, sigma).unwrap();
    Frame::from_fn(f.width(), f.height(), |y, x| {
        (f64::from(f.get(y, x)) + n.sample(r)).clamp(0.0, 255.0) as f32
    })
}

fn ms_ssim_checks() -> (bool, String) {
    let p = MsSsimParams::default();
    let mut r = rng(1006);
    let img = texture_frame(256, 256, &mut r);
    let id = ms_ssim(&img, &img, &p).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let a = texture_frame(256, 256, &mut r);
        let b = if i % 2 == 0 {
            add_noise(&a, r.gen_range(1.0..40.0), &mut r)
        } else {
            shifted(&a, r.gen_range(-3..=3), r.gen_range(-3..=3))
        };
        worst = worst.max((ms_ssim(&a, &b, &p).unwrap() - direct_ms_ssim(&a, &b)).abs());
    }
    let scores: Vec<f64> = [2.0, 8.0, 32.0]
        .iter()
        .map(|&s| ms_ssim(&img, &add_noise(&img, s, &mut r), &p).unwrap())
        .collect();
    let monotone = id > scores[0] && scores[0] > scores[1] && scores[1] > scores[2];
    (
        (id - 1.0).abs() <= 1e-9 && worst <= 1e-4 && monotone,
        format!("identity {id:.12}; max |ours - direct| over 50 pairs {worst:.2e}; sigma 2/8/32 -> {scores:.5?}"),
    )
}

fn dataset_counts() -> (bool, String) {
    let mut bad = 0;
    let mut total = 0;
    for k in 1..=4u8 {
        let layer = LayerSpec::new(k).unwrap();
        let d = 1usize << (4 - k);
        let delta = if k == 4 { 3 } else { 2 };
        for n in 0..=200 {
            let got = extract_triplets(n, &layer);
            let want = enumerate_triplets(n, d, delta);
            total += got.len();
            bad += usize::from(got != want || layer.count(n) != want.len());
            bad += got.iter().filter(|t| t.1 - t.0 != d || t.2 - t.1 != d).count();
        }
    }
    (
        bad == 0,
        format!("N 0..=200 x k 1..=4: {bad} disagreements over {total} triplets"),
    )
}

fn export_checks() -> (bool, String) {
    let mut pack_bad = 0u64;
    for u in -508..=508 {
        for v in -508..=508 {
            let q = QuarterPelMv { u_q4: u, v_q4: v };
            pack_bad += u64::from(unpack_mv(pack_mv(q).unwrap()) != q);
        }
    }
    let mut r = rng(1008);
    let (w, h) = (320, 192);
    let mut frames = Vec::new();
    let mut scatter_bad = 0;
    for _ in 0..3 {
        let mut set = MvFieldSet::zeros(w, h).unwrap();
        for f in &mut set.fields {
            let [rows, cols, _] = f.dims();
            for row in 0..rows {
                for col in 0..cols {
                    for ch in 0..4 {
                        f.set(row, col, ch, r.gen_range(-127.0..=127.0));
                    }
                }
            }
        }
        let packed = assemble_superblocks(&set).unwrap();
        scatter_bad += usize::from(scatter_superblocks(&packed).unwrap() != quantize_fields(&set).unwrap());
        frames.push(packed);
    }
    let header = MvFileHeader {
        width: w as u32,
        height: h as u32,
        ordering: ORDER_SIZE_MAJOR_RASTER,
    };
    let bytes = encode_mv_file(&header, &frames).unwrap();
    let (h2, back) = decode_mv_file(&bytes, Path::new("acceptance")).unwrap();
    let file_ok = h2 == header && back == frames && encode_mv_file(&h2, &back).unwrap() == bytes;
    let hd = assemble_superblocks(&MvFieldSet::zeros(1920, 1088).unwrap())
        .unwrap()
        .dims();
    (
        pack_bad == 0 && scatter_bad == 0 && file_ok && hd == [2, 30, 17, 85],
        format!(
            "1017^2 pack sweep: {pack_bad} failures; scatter mismatches {scatter_bad}; file round trip {file_ok}; 1920x1088 -> {hd:?}"
        ),
    )
}

fn feature_reuse() -> (bool, String) {
    let mut model = CbtNet::<f32>::new(CbtNetConfig::default(), 9).unwrap();
    let mut r = rng(1009);
    let t = FrameTriplet::unpadded(
        noise_frame(128, 128, &mut r),
        noise_frame(128, 128, &mut r),
        noise_frame(128, 128, &mut r),
        4,
    )
    .unwrap();
    let mut g = Graph::new();
    let vars: Vec<Var> = model.params.iter().map(|(_, p)| g.constant(p.clone())).collect();
    let input = g.constant(stack_inputs(&[&t]).unwrap());
    let outs = model.forward_graph(&mut g, &vars, input, NormMode::Eval).unwrap();
    let convs = g.op_count(FEATURE_SCOPE, "conv2d");
    let both = outs.iter().all(|&o| g.value(o).dims()[1] == 4);
    (
        convs == 9 && both,
        format!("one forward pass: {convs} feature-extraction convolutions (9 layers), 4-channel past+future output per stage: {both}"),
    )
}

fn bd_checks() -> (bool, String) {
    let pts = |c: &[(f64, f64)]| {
        c.iter()
            .map(|&(bitrate, quality)| RdPoint { bitrate, quality })
            .collect::<Vec<_>>()
    };
    let mut r = rng(1010);
    let random_curve = |r: &mut rand_chacha::ChaCha8Rng| {
        let mut rate = r.gen_range(200.0..400.0);
        let mut q = r.gen_range(30.0..33.0);
        (0..4)
            .map(|_| {
                let p = (rate, q);
                rate *= r.gen_range(1.6..2.4);
                q += r.gen_range(2.0..4.0);
                p
            })
            .collect::<Vec<_>>()
    };
    let a = random_curve(&mut r);
    let same = bd_rate(&pts(&a), &pts(&a)).unwrap();
    let scaled: Vec<(f64, f64)> = a.iter().map(|&(rate, q)| (rate * 1.1, q)).collect();
    let ten = bd_rate(&pts(&a), &pts(&scaled)).unwrap();
    // Competing codecs: per-point rate differences up to 1.5%.
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = random_curve(&mut r);
        let b: Vec<(f64, f64)> = a
            .iter()
            .map(|&(rate, q)| (rate * r.gen_range(0.985..1.015), q))
            .collect();
        let s = bd_rate(&pts(&a), &pts(&b)).unwrap() + bd_rate(&pts(&b), &pts(&a)).unwrap();
        worst = worst.max(s.abs());
    }
    (
        format!("{same:.3}") == "0.000" && (ten - 10.0).abs() <= 1e-6 && worst <= 0.05,
        format!("identical {same:.3}%; x1.10 -> {ten:.9}%; max |BD(a,b)+BD(b,a)| over 100 pairs {worst:.4}%"),
    )
}

fn main() {
    let t0 = Instant::now();
    let mut verdicts = vec![
        timed(1, "gradient suite", gradient_suite),
        timed(2, "warp oracle", warp_oracle),
        timed(3, "search oracles", search_oracles),
    ];
    let t5 = Instant::now();
    let ((pass5, detail5), model) = toy_training();
    let v5 = Verdict {
        id: 5,
        name: "toy training convergence",
        pass: pass5,
        detail: detail5,
        seconds: t5.elapsed().as_secs_f64(),
    };
    verdicts.push(match &model {
        Some(m) => timed(4, "aperture/coherence", || {
            let r = selftest::aperture(m);
            (r.passed, r.detail)
        }),
        None => {
            let v = Verdict {
                id: 4,
                name: "aperture/coherence",
                pass: false,
                detail: "no trained model".into(),
                seconds: 0.0,
            };
            report(&v);
            v
        }
    });
    report(&v5);
    verdicts.push(v5);
    verdicts.push(timed(6, "MS-SSIM correctness", ms_ssim_checks));
    verdicts.push(timed(7, "dataset closed form", dataset_counts));
    verdicts.push(timed(8, "export exactness", export_checks));
    verdicts.push(timed(9, "feature-reuse accounting", feature_reuse));
    verdicts.push(timed(10, "BD-rate utility", bd_checks));
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0}s",
        verdicts.len(),
        t0.elapsed().as_secs_f64()
    );
}
