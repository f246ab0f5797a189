//! Self-supervised training and validation.

use std::fmt::Write as _;

use cbt_tensor::ops::NormMode;
use cbt_tensor::{adam_step, AdamConfig, AdamState, Graph, Tensor, TensorError, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blockmatch::{run_baseline, Algorithm};
use crate::checkpoint::{Checkpoint, TrainingMetadata};
use crate::error::{invalid, Error, Result};
use crate::frame::Frame;
use crate::model::{forward, CbtNet};
use crate::mv::{MvFieldSet, RefDir, BLOCK_SIZES};
use crate::quality::{cbt_loss, mad, ms_ssim, MsSsimParams};
use crate::triplet::{stack_frames, stack_inputs, FrameTriplet};
use crate::warp::{predict_frames, predict_frames_graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layer_k: u8,
    pub resolution: String,
    pub batch_size: usize,
    pub lr: f64,
    pub max_steps: u64,
    /// Validate every this many steps (0 = only at the end).
    pub val_every: u64,
    pub seed: u64,
    /// Side of the square training crop (a multiple of 64), or full frames.
    pub crop: Option<usize>,
    pub ms_ssim: MsSsimParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layer_k: 4,
            resolution: "1080p".into(),
            batch_size: 8,
            lr: 1e-4,
            max_steps: 1000,
            val_every: 100,
            seed: 0,
            crop: None,
            ms_ssim: MsSsimParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("train config", "batch size must be at least 1"));
        }
        if let Some(c) = self.crop {
            if c == 0 || c % 64 != 0 {
                return Err(invalid(
                    "train config",
                    format!("crop {c} is not a positive multiple of 64"),
                ));
            }
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(invalid("train config", format!("learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// One optimisation step of the loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss_db: f64,
    /// Batch-mean MS-SSIM, `[reference][size]`.
    pub ms_ssim: [[f64; 4]; 2],
}

pub const LOSS_CSV_HEADER: &str = "step,loss_db,ms_ssim_64_p,ms_ssim_32_p,ms_ssim_16_p,ms_ssim_8_p,ms_ssim_64_f,ms_ssim_32_f,ms_ssim_16_f,ms_ssim_8_f";

pub fn loss_csv(records: &[StepRecord]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = write!(s, "{},{}", r.step, r.loss_db);
        for row in &r.ms_ssim {
            for v in row {
                let _ = write!(s, ",{v}");
            }
        }
        s.push('\n');
    }
    s
}

/// A prepared mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub input: Tensor<f32>,
    pub past: Tensor<f32>,
    pub q: Tensor<f32>,
    pub future: Tensor<f32>,
    pub valid_h: usize,
    pub valid_w: usize,
}

/// Aligned crop shared by the three frames of a triplet, drawn inside the
/// unpadded region where possible.
pub fn crop_triplet<R: Rng>(t: &FrameTriplet, size: usize, rng: &mut R) -> Result<FrameTriplet> {
    if size > t.width() || size > t.height() {
        return Err(invalid(
            "crop",
            format!("crop {size} exceeds triplet {}x{}", t.width(), t.height()),
        ));
    }
    if size == t.width() && size == t.height() {
        return Ok(t.clone());
    }
    let top = rng.gen_range(0..=t.orig_h.saturating_sub(size).min(t.height() - size));
    let left = rng.gen_range(0..=t.orig_w.saturating_sub(size).min(t.width() - size));
    let c = |f: &Frame| f.crop(top, left, size, size);
    FrameTriplet::new(
        c(&t.past)?,
        c(&t.q)?,
        c(&t.future)?,
        t.layer_k,
        (t.orig_w - left).min(size),
        (t.orig_h - top).min(size),
    )
}

pub fn make_batch(triplets: &[&FrameTriplet]) -> Result<Batch> {
    let valid_h = triplets
        .iter()
        .map(|t| t.orig_h)
        .min()
        .ok_or_else(|| invalid("batch", "empty batch"))?;
    let valid_w = triplets.iter().map(|t| t.orig_w).min().unwrap_or(0);
    let frames = |sel: fn(&FrameTriplet) -> &Frame| -> Result<Tensor<f32>> {
        stack_frames(&triplets.iter().map(|t| sel(t)).collect::<Vec<_>>())
    };
    Ok(Batch {
        input: stack_inputs(triplets)?,
        past: frames(|t| &t.past)?,
        q: frames(|t| &t.q)?,
        future: frames(|t| &t.future)?,
        valid_h,
        valid_w,
    })
}

/// Deterministic batch schedule: per-epoch shuffles of `0..n` from `seed`,
/// with crop offsets drawn from a dedicated stream.
pub struct BatchSchedule {
    n: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
    crop_rng: ChaCha8Rng,
}

impl BatchSchedule {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            n,
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
            crop_rng: ChaCha8Rng::seed_from_u64(seed ^ 0xc40b_5eed),
        };
        s.pos = s.n;
        s
    }

    pub fn next_indices(&mut self, batch: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            if self.pos >= self.n {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    pub fn next_batch(&mut self, data: &[FrameTriplet], cfg: &TrainConfig) -> Result<Batch> {
        let idx = self.next_indices(cfg.batch_size);
        let picked: Vec<FrameTriplet> = match cfg.crop {
            Some(c) => idx
                .iter()
                .map(|&i| crop_triplet(&data[i], c, &mut self.crop_rng))
                .collect::<Result<_>>()?,
            None => idx.iter().map(|&i| data[i].clone()).collect(),
        };
        make_batch(&picked.iter().collect::<Vec<_>>())
    }
}

/// Loss value and parameter gradients of one batch, in train mode.
pub struct StepEval {
    pub loss: f64,
    pub ms_ssim: [[f64; 4]; 2],
    pub grads: Vec<Tensor<f32>>,
}

/// Forward and backward pass over one batch; batch-norm statistics of
/// `model` are updated.
pub fn evaluate_batch(model: &mut CbtNet<f32>, batch: &Batch, p: &MsSsimParams, want_grads: bool) -> Result<StepEval> {
    let mut g = Graph::new();
    let vars: Vec<Var> = if want_grads {
        model.bind(&mut g)
    } else {
        model.params.iter().map(|(_, t)| g.constant(t.clone())).collect()
    };
    let input = g.constant(batch.input.clone());
    let past = g.constant(batch.past.clone());
    let q = g.constant(batch.q.clone());
    let future = g.constant(batch.future.clone());
    let outs = forward(&model.config, &mut model.bn, &mut g, &vars, input, NormMode::Train)?;
    let preds = predict_frames_graph(&mut g, [past, future], &outs)?;
    let lv = cbt_loss(&mut g, q, &preds, batch.valid_h, batch.valid_w, p)?;
    let loss = f64::from(g.value(lv.loss).item());
    let mut ms = [[0.0; 4]; 2];
    for (c, row) in lv.scores.iter().enumerate() {
        for (si, &v) in row.iter().enumerate() {
            let t = g.value(v);
            ms[c][si] = t.data().iter().map(|&x| f64::from(x)).sum::<f64>() / t.numel() as f64;
        }
    }
    let grads = if want_grads {
        g.backward(lv.loss)?;
        vars.iter()
            .zip(model.params.iter())
            .map(|(&v, (_, t))| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(t.dims())))
            .collect()
    } else {
        Vec::new()
    };
    Ok(StepEval {
        loss,
        ms_ssim: ms,
        grads,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation score (or the final one when no
    /// validation set was given).
    pub best: Checkpoint,
    /// State after the last successful step.
    pub last: Checkpoint,
    pub history: Vec<StepRecord>,
    pub validations: Vec<(u64, ValidationReport)>,
    /// Reason training stopped early, if it did.
    pub aborted: Option<String>,
}

fn snapshot(model: &CbtNet<f32>, adam: &AdamState<f32>, cfg: &TrainConfig, step: u64, loss: Option<f64>) -> Checkpoint {
    Checkpoint {
        model: model.clone(),
        adam: Some(adam.clone()),
        metadata: TrainingMetadata {
            seed: cfg.seed,
            step,
            layer_k: cfg.layer_k,
            resolution: cfg.resolution.clone(),
            loss,
        },
    }
}

/// Trains `model` on `train` with Adam. Validation, when `val` is non-empty,
/// runs every `val_every` steps and after the last one; the checkpoint with
/// the lowest mean model MAD is retained. A non-finite loss or gradient stops
/// training and returns the last good state.
pub fn train(
    model: CbtNet<f32>,
    train: &[FrameTriplet],
    val: &[FrameTriplet],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(invalid("train", "empty training set"));
    }
    let mut model = model;
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut schedule = BatchSchedule::new(train.len(), cfg.seed);
    let mut history = Vec::new();
    let mut validations = Vec::new();
    let mut last = snapshot(&model, &adam, cfg, 0, None);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut aborted = None;
    let mut consider = |step: u64,
                        model: &CbtNet<f32>,
                        ck: &Checkpoint,
                        validations: &mut Vec<(u64, ValidationReport)>|
     -> Result<()> {
        if val.is_empty() {
            return Ok(());
        }
        let report = validate(model, val, &[], 0, &cfg.ms_ssim)?;
        let score = report.mean_mad("cbt");
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, ck.clone()));
        }
        validations.push((step, report));
        Ok(())
    };
    for step in 0..cfg.max_steps {
        let batch = schedule.next_batch(train, cfg)?;
        let bn_before = model.bn.clone();
        let eval = match evaluate_batch(&mut model, &batch, &cfg.ms_ssim, true) {
            Ok(e) => e,
            Err(Error::Tensor(TensorError::NonFinite { op })) => {
                model.bn = bn_before;
                aborted = Some(format!("non-finite value in {op} at step {step}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if let Err(e) = adam_step(&mut model.params, &eval.grads, &mut adam) {
            model.bn = bn_before;
            aborted = Some(format!("update refused at step {step}: {e}"));
            break;
        }
        let rec = StepRecord {
            step,
            loss_db: eval.loss,
            ms_ssim: eval.ms_ssim,
        };
        on_step(&rec);
        history.push(rec);
        last = snapshot(&model, &adam, cfg, step + 1, Some(eval.loss));
        let done = step + 1 == cfg.max_steps;
        if done || (cfg.val_every > 0 && (step + 1) % cfg.val_every == 0) {
            consider(step + 1, &model, &last, &mut validations)?;
        }
    }
    let best = best.map_or_else(|| last.clone(), |(_, c)| c);
    Ok(TrainOutcome {
        best,
        last,
        history,
        validations,
        aborted,
    })
}

/// Mean MAD and MS-SSIM per method, block size and reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub layer_k: u8,
    pub triplets: usize,
    /// `(method, block size, reference tag, mean MAD, mean MS-SSIM)`.
    pub rows: Vec<(String, usize, String, f64, f64)>,
}

impl ValidationReport {
    pub fn get(&self, method: &str, size: usize, dir: RefDir) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .find(|r| r.0 == method && r.1 == size && r.2 == dir.tag())
            .map(|r| (r.3, r.4))
    }

    /// MAD averaged over references for one method and size.
    pub fn mad(&self, method: &str, size: usize) -> Option<f64> {
        let p = self.get(method, size, RefDir::Past)?.0;
        let f = self.get(method, size, RefDir::Future)?.0;
        Some(0.5 * (p + f))
    }

    pub fn mean_mad(&self, method: &str) -> f64 {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.0 == method).map(|r| r.3).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Long-format CSV with one row per method, size and reference.
    pub fn detail_csv(&self) -> String {
        let mut s = String::from("layer,method,block_size,reference,mad,ms_ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", self.layer_k, r.0, r.1, r.2, r.3, r.4);
        }
        s
    }
}

/// Table with one row per temporal layer and one column per block size and
/// method, holding MAD averaged over both references.
pub fn table_csv(reports: &[ValidationReport], methods: &[&str]) -> String {
    let mut s = String::from("layer");
    for size in BLOCK_SIZES {
        for m in methods {
            let _ = write!(s, ",{size}x{size}_{m}");
        }
    }
    s.push('\n');
    for r in reports {
        let _ = write!(s, "{}", r.layer_k);
        for size in BLOCK_SIZES {
            for m in methods {
                match r.mad(m, size) {
                    Some(v) => {
                        let _ = write!(s, ",{v:.4}");
                    }
                    None => s.push(','),
                }
            }
        }
        s.push('\n');
    }
    s
}

/// Accumulates per-(size, reference) sums for one method.
fn accumulate(sums: &mut [[(f64, f64); 2]; 4], t: &FrameTriplet, mvs: &MvFieldSet, p: &MsSsimParams) -> Result<()> {
    let preds = predict_frames(t, mvs)?;
    let q = t.q.crop(0, 0, t.orig_h, t.orig_w)?;
    for dir in RefDir::BOTH {
        for si in 0..4 {
            let pr = preds.frames[dir.index()][si].crop(0, 0, t.orig_h, t.orig_w)?;
            let e = &mut sums[si][dir.index()];
            e.0 += mad(&q, &pr)?;
            e.1 += ms_ssim(&q, &pr, p)?;
        }
    }
    Ok(())
}

/// Eval-mode prediction errors on the unpadded region of every triplet, for
/// the model (`"cbt"`) and each requested baseline.
pub fn validate(
    model: &CbtNet<f32>,
    val: &[FrameTriplet],
    baselines: &[Algorithm],
    range: i32,
    p: &MsSsimParams,
) -> Result<ValidationReport> {
    if val.is_empty() {
        return Err(invalid("validate", "empty validation set"));
    }
    let layer_k = val[0].layer_k;
    let mut methods: Vec<(String, [[(f64, f64); 2]; 4])> = vec![("cbt".into(), [[(0.0, 0.0); 2]; 4])];
    for a in baselines {
        methods.push((a.name().into(), [[(0.0, 0.0); 2]; 4]));
    }
    for t in val {
        let mvs = model.predict(t)?;
        accumulate(&mut methods[0].1, t, &mvs, p)?;
        for (i, &a) in baselines.iter().enumerate() {
            let run = run_baseline(t, a, &BLOCK_SIZES, range)?;
            accumulate(&mut methods[i + 1].1, t, &run.mvs, p)?;
        }
    }
    let n = val.len() as f64;
    let mut rows = Vec::new();
    for (name, sums) in &methods {
        for (si, &size) in BLOCK_SIZES.iter().enumerate() {
            for dir in RefDir::BOTH {
                let (m, s) = sums[si][dir.index()];
                rows.push((name.clone(), size, dir.tag().to_string(), m / n, s / n));
            }
        }
    }
    Ok(ValidationReport {
        layer_k,
        triplets: val.len(),
        rows,
    })
}
