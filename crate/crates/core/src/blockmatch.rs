//! SAD block matching: exhaustive, diamond and adaptive rood pattern search.
//!
//! A candidate `(u, v)` for the block at `(by, bx)` compares the current
//! block with the reference block whose top-left corner is
//! `(by + u, bx + v)`; reference reads are clamped to the frame.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::frame::Frame;
use crate::mv::{IntMvField, Mv, MvFieldSet, RefDir, BLOCK_SIZES};
use crate::triplet::FrameTriplet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Es,
    Ds,
    Arps,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Es => "es",
            Algorithm::Ds => "ds",
            Algorithm::Arps => "arps",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "es" => Ok(Algorithm::Es),
            "ds" => Ok(Algorithm::Ds),
            "arps" => Ok(Algorithm::Arps),
            other => Err(invalid("algorithm", format!("unknown matcher {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub block_size: usize,
    pub range: i32,
}

impl SearchSpec {
    pub const DEFAULT_RANGE: i32 = 127;

    pub fn new(block_size: usize, range: i32) -> Self {
        Self { block_size, range }
    }

    fn check(&self, cur: &Frame, reference: &Frame) -> Result<(usize, usize)> {
        cur.same_dims(reference, "block search")?;
        if self.range < 1 {
            return Err(invalid("block search", format!("search range {} below 1", self.range)));
        }
        let s = self.block_size;
        if s == 0 || cur.width() % s != 0 || cur.height() % s != 0 {
            return Err(invalid(
                "block search",
                format!("{s}px blocks do not tile {}x{}", cur.width(), cur.height()),
            ));
        }
        Ok((cur.height() / s, cur.width() / s))
    }
}

/// Per-block matching result.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub field: IntMvField,
    /// SAD of the chosen candidate, per block in raster order.
    pub sad: Vec<f64>,
    /// Number of distinct candidates evaluated, per block.
    pub probes: Vec<u32>,
}

/// Sum of absolute differences of two equally sized blocks.
pub fn sad(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(crate::error::dims_err("sad", "block length", a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| f64::from((x - y).abs())).sum())
}

/// SAD between the current block at `(by, bx)` and the reference block
/// displaced by `mv`, with clamped reference reads.
pub fn block_sad(cur: &Frame, reference: &Frame, by: usize, bx: usize, s: usize, mv: Mv) -> f64 {
    let (w, h) = (cur.width(), cur.height());
    let ry = by as i64 + i64::from(mv.u);
    let rx = bx as i64 + i64::from(mv.v);
    let cd = cur.data();
    let rd = reference.data();
    let mut total = 0.0f64;
    if ry >= 0 && rx >= 0 && ry as usize + s <= h && rx as usize + s <= w {
        let (ry, rx) = (ry as usize, rx as usize);
        for y in 0..s {
            let c = &cd[(by + y) * w + bx..(by + y) * w + bx + s];
            let r = &rd[(ry + y) * w + rx..(ry + y) * w + rx + s];
            let row: f32 = c.iter().zip(r).map(|(a, b)| (a - b).abs()).sum();
            total += f64::from(row);
        }
    } else {
        let xs: Vec<usize> = (0..s)
            .map(|x| (rx + x as i64).clamp(0, w as i64 - 1) as usize)
            .collect();
        for y in 0..s {
            let sy = (ry + y as i64).clamp(0, h as i64 - 1) as usize;
            let c = &cd[(by + y) * w + bx..(by + y) * w + bx + s];
            let r = &rd[sy * w..(sy + 1) * w];
            let row: f32 = c.iter().zip(&xs).map(|(a, &sx)| (a - r[sx]).abs()).sum();
            total += f64::from(row);
        }
    }
    total
}

/// Total order used to pick among candidates: SAD, then `|u|+|v|`, then `u`, then `v`.
#[inline]
fn better(a: (f64, Mv), b: (f64, Mv)) -> bool {
    (a.0, a.1.l1(), a.1.u, a.1.v).partial_cmp(&(b.0, b.1.l1(), b.1.u, b.1.v)) == Some(std::cmp::Ordering::Less)
}

/// Memoised SAD evaluation for one block.
struct Probe<'a> {
    cur: &'a Frame,
    reference: &'a Frame,
    by: usize,
    bx: usize,
    s: usize,
    range: i32,
    seen: HashMap<Mv, f64>,
    best: (f64, Mv),
}

impl<'a> Probe<'a> {
    fn new(cur: &'a Frame, reference: &'a Frame, by: usize, bx: usize, s: usize, range: i32) -> Self {
        Self {
            cur,
            reference,
            by,
            bx,
            s,
            range,
            seen: HashMap::new(),
            best: (f64::INFINITY, Mv::ZERO),
        }
    }

    /// Evaluates `mv` clamped to the search window and returns it with its SAD.
    fn eval(&mut self, mv: Mv) -> (f64, Mv) {
        let mv = Mv::new(mv.u.clamp(-self.range, self.range), mv.v.clamp(-self.range, self.range));
        let sad = match self.seen.get(&mv) {
            Some(&s) => s,
            None => {
                let s = block_sad(self.cur, self.reference, self.by, self.bx, self.s, mv);
                self.seen.insert(mv, s);
                s
            }
        };
        if better((sad, mv), self.best) {
            self.best = (sad, mv);
        }
        (sad, mv)
    }

    /// Best of `center` and `center + offsets`.
    fn step(&mut self, center: Mv, offsets: &[(i32, i32)]) -> (f64, Mv) {
        let mut best = self.eval(center);
        for &(du, dv) in offsets {
            let c = self.eval(Mv::new(center.u + du, center.v + dv));
            if better(c, best) {
                best = c;
            }
        }
        best
    }
}

const LARGE_DIAMOND: [(i32, i32); 8] = [(-2, 0), (-1, -1), (-1, 1), (0, -2), (0, 2), (1, -1), (1, 1), (2, 0)];
const SMALL_DIAMOND: [(i32, i32); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

fn es_block(cur: &Frame, reference: &Frame, by: usize, bx: usize, s: usize, r: i32) -> (f64, Mv, u32) {
    let mut best = (f64::INFINITY, Mv::ZERO);
    for u in -r..=r {
        for v in -r..=r {
            let mv = Mv::new(u, v);
            let c = (block_sad(cur, reference, by, bx, s, mv), mv);
            if better(c, best) {
                best = c;
            }
        }
    }
    (best.0, best.1, ((2 * r + 1) * (2 * r + 1)) as u32)
}

fn ds_block(cur: &Frame, reference: &Frame, by: usize, bx: usize, s: usize, r: i32) -> (f64, Mv, u32) {
    let mut p = Probe::new(cur, reference, by, bx, s, r);
    let mut center = Mv::ZERO;
    loop {
        let (_, next) = p.step(center, &LARGE_DIAMOND);
        if next == center {
            break;
        }
        center = next;
    }
    let (sad, mv) = p.step(center, &SMALL_DIAMOND);
    (sad, mv, p.seen.len() as u32)
}

fn arps_block(
    cur: &Frame,
    reference: &Frame,
    by: usize,
    bx: usize,
    s: usize,
    r: i32,
    left: Option<Mv>,
) -> (f64, Mv, u32) {
    let mut p = Probe::new(cur, reference, by, bx, s, r);
    let arm = match left {
        Some(m) => m.u.abs().max(m.v.abs()),
        None => 2,
    };
    p.eval(Mv::ZERO);
    for (du, dv) in [(-arm, 0), (0, -arm), (0, arm), (arm, 0)] {
        p.eval(Mv::new(du, dv));
    }
    if let Some(m) = left {
        p.eval(m);
    }
    let mut center = p.best.1;
    loop {
        let (_, next) = p.step(center, &SMALL_DIAMOND);
        if next == center {
            break;
        }
        center = next;
    }
    (p.best.0, center, p.seen.len() as u32)
}

fn collect(spec: &SearchSpec, rows: usize, cols: usize, per_block: Vec<(f64, Mv, u32)>) -> SearchResult {
    let mut field = IntMvField::zeros(spec.block_size, rows, cols);
    let mut sad = Vec::with_capacity(per_block.len());
    let mut probes = Vec::with_capacity(per_block.len());
    for (i, (s, mv, n)) in per_block.into_iter().enumerate() {
        field.mvs[i] = mv;
        sad.push(s);
        probes.push(n);
    }
    SearchResult { field, sad, probes }
}

/// Exhaustive search over `[-R, R]^2`.
pub fn es_search(cur: &Frame, reference: &Frame, spec: &SearchSpec) -> Result<SearchResult> {
    let (rows, cols) = spec.check(cur, reference)?;
    let s = spec.block_size;
    let out = (0..rows * cols)
        .into_par_iter()
        .map(|i| es_block(cur, reference, (i / cols) * s, (i % cols) * s, s, spec.range))
        .collect();
    Ok(collect(spec, rows, cols, out))
}

/// Large-diamond iterations until the centre wins, then one small-diamond step.
pub fn ds_search(cur: &Frame, reference: &Frame, spec: &SearchSpec) -> Result<SearchResult> {
    let (rows, cols) = spec.check(cur, reference)?;
    let s = spec.block_size;
    let out = (0..rows * cols)
        .into_par_iter()
        .map(|i| ds_block(cur, reference, (i / cols) * s, (i % cols) * s, s, spec.range))
        .collect();
    Ok(collect(spec, rows, cols, out))
}

/// Adaptive rood pattern search; the left neighbour's MV sets the arm length
/// and is probed as a predictor. Rows are independent.
pub fn arps_search(cur: &Frame, reference: &Frame, spec: &SearchSpec) -> Result<SearchResult> {
    let (rows, cols) = spec.check(cur, reference)?;
    let s = spec.block_size;
    let out: Vec<Vec<(f64, Mv, u32)>> = (0..rows)
        .into_par_iter()
        .map(|row| {
            let mut line = Vec::with_capacity(cols);
            let mut left = None;
            for col in 0..cols {
                let res = arps_block(cur, reference, row * s, col * s, s, spec.range, left);
                left = Some(res.1);
                line.push(res);
            }
            line
        })
        .collect();
    Ok(collect(spec, rows, cols, out.into_iter().flatten().collect()))
}

pub fn search(algo: Algorithm, cur: &Frame, reference: &Frame, spec: &SearchSpec) -> Result<SearchResult> {
    match algo {
        Algorithm::Es => es_search(cur, reference, spec),
        Algorithm::Ds => ds_search(cur, reference, spec),
        Algorithm::Arps => arps_search(cur, reference, spec),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub block_size: usize,
    pub reference: RefDir,
    pub seconds: f64,
    pub total_sad: f64,
    pub probes: u64,
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub algorithm: Algorithm,
    pub mvs: MvFieldSet,
    pub results: Vec<(usize, RefDir, SearchResult)>,
    pub invocations: Vec<Invocation>,
    /// Blocks lying entirely in the padding, per size, in raster order.
    pub padding_blocks: Vec<(usize, Vec<bool>)>,
}

impl BaselineRun {
    /// Fraction of total wall time spent per block size, in `sizes` order.
    pub fn time_shares(&self) -> Vec<(usize, f64)> {
        let total: f64 = self.invocations.iter().map(|i| i.seconds).sum();
        let mut sizes: Vec<usize> = self.invocations.iter().map(|i| i.block_size).collect();
        sizes.dedup();
        sizes
            .into_iter()
            .map(|s| {
                let t: f64 = self
                    .invocations
                    .iter()
                    .filter(|i| i.block_size == s)
                    .map(|i| i.seconds)
                    .sum();
                (s, if total > 0.0 { t / total } else { 0.0 })
            })
            .collect()
    }
}

/// Runs `algo` once per block size in `sizes` and reference frame.
/// Sizes missing from `sizes` keep zero fields in the returned set.
pub fn run_baseline(triplet: &FrameTriplet, algo: Algorithm, sizes: &[usize], range: i32) -> Result<BaselineRun> {
    let mut mvs = MvFieldSet::zeros(triplet.width(), triplet.height())?;
    let mut invocations = Vec::new();
    let mut results = Vec::new();
    let mut padding_blocks = Vec::new();
    for &s in sizes {
        if !BLOCK_SIZES.contains(&s) {
            return Err(invalid(
                "run_baseline",
                format!("block size {s} not one of {BLOCK_SIZES:?}"),
            ));
        }
        let spec = SearchSpec::new(s, range);
        for dir in RefDir::BOTH {
            let start = Instant::now();
            let res = search(algo, &triplet.q, triplet.reference(dir), &spec)?;
            let seconds = start.elapsed().as_secs_f64();
            let field = mvs.field_mut(s)?;
            for r in 0..res.field.rows {
                for c in 0..res.field.cols {
                    let mv = res.field.get(r, c);
                    field.set_mv(r, c, dir, (mv.u as f32, mv.v as f32));
                }
            }
            invocations.push(Invocation {
                block_size: s,
                reference: dir,
                seconds,
                total_sad: res.sad.iter().sum(),
                probes: res.probes.iter().map(|&p| u64::from(p)).sum(),
            });
            results.push((s, dir, res));
        }
        let (rows, cols) = (triplet.height() / s, triplet.width() / s);
        let flags = (0..rows * cols)
            .map(|i| (i / cols) * s >= triplet.orig_h || (i % cols) * s >= triplet.orig_w)
            .collect();
        padding_blocks.push((s, flags));
    }
    Ok(BaselineRun {
        algorithm: algo,
        mvs,
        results,
        invocations,
        padding_blocks,
    })
}
