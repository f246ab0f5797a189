//! Triplet database construction: resampling, padding, per-layer triplet
//! extraction and the manifest/index formats.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::frame::Frame;
use crate::triplet::FrameTriplet;
use crate::video::{LumaReader, VideoFormat};

const LANCZOS_A: f64 = 3.0;

fn lanczos(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.abs() >= LANCZOS_A {
        0.0
    } else {
        let px = std::f64::consts::PI * x;
        LANCZOS_A * px.sin() * (px / LANCZOS_A).sin() / (px * px)
    }
}

/// Normalised taps `(first source index, weights)` for every output sample.
/// Taps falling outside the source are dropped before normalisation.
fn lanczos_taps(n_in: usize, n_out: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = n_in as f64 / n_out as f64;
    let stretch = scale.max(1.0);
    let support = LANCZOS_A * stretch;
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0) as usize).min(n_in - 1);
            let hi = ((center + support).ceil() as usize).clamp(lo + 1, n_in);
            let mut w: Vec<f64> = (lo..hi).map(|i| lanczos((i as f64 + 0.5 - center) / stretch)).collect();
            let s: f64 = w.iter().sum();
            for v in &mut w {
                *v /= s;
            }
            (lo, w)
        })
        .collect()
}

/// Separable Lanczos-3 resampling; the result is rounded and clipped to
/// `0..=255`.
pub fn lanczos_resize(frame: &Frame, out_w: usize, out_h: usize) -> Result<Frame> {
    if out_w == 0 || out_h == 0 {
        return Err(invalid("lanczos_resize", format!("empty output {out_w}x{out_h}")));
    }
    let (w, h) = (frame.width(), frame.height());
    if (w, h) == (out_w, out_h) {
        return Ok(frame.clone());
    }
    let src = frame.data();
    let xt = lanczos_taps(w, out_w);
    let mut tmp = vec![0.0f64; h * out_w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (ox, (lo, wts)) in xt.iter().enumerate() {
            tmp[y * out_w + ox] = wts.iter().zip(&row[*lo..]).map(|(wt, &v)| wt * f64::from(v)).sum();
        }
    }
    let yt = lanczos_taps(h, out_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for (lo, wts) in &yt {
        for ox in 0..out_w {
            let v: f64 = wts
                .iter()
                .enumerate()
                .map(|(i, wt)| wt * tmp[(lo + i) * out_w + ox])
                .sum();
            out.push(v.round().clamp(0.0, 255.0) as f32);
        }
    }
    Frame::new(out_w, out_h, out)
}

/// Zero-pads on the right and bottom to the next multiple of `multiple`.
/// Returns the padded frame and the original extents.
pub fn pad_to_multiple(frame: &Frame, multiple: usize) -> Result<(Frame, usize, usize)> {
    if multiple == 0 {
        return Err(invalid("pad_to_multiple", "multiple must be positive"));
    }
    let (w, h) = (frame.width(), frame.height());
    let (pw, ph) = (w.div_ceil(multiple) * multiple, h.div_ceil(multiple) * multiple);
    if (pw, ph) == (w, h) {
        return Ok((frame.clone(), w, h));
    }
    let mut out = Frame::filled(pw, ph, 0.0);
    for y in 0..h {
        out.data_mut()[y * pw..y * pw + w].copy_from_slice(&frame.data()[y * w..(y + 1) * w]);
    }
    Ok((out, w, h))
}

/// Temporal layer geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub k: u8,
    /// Distance from the current frame to either reference.
    pub d: usize,
    /// Spacing parameter between successive triplets.
    pub delta: usize,
}

impl LayerSpec {
    pub fn new(k: u8) -> Result<Self> {
        if !(1..=4).contains(&k) {
            return Err(invalid("layer", format!("layer {k} outside 1..=4")));
        }
        Ok(Self {
            k,
            d: 1 << (4 - k),
            delta: if k == 4 { 3 } else { 2 },
        })
    }

    pub fn all() -> [LayerSpec; 4] {
        [1, 2, 3, 4].map(|k| Self::new(k).expect("valid layer"))
    }

    /// Frames covered by one triplet.
    pub fn span(&self) -> usize {
        2 * self.d + 1
    }

    /// Anchor advance between successive triplets.
    pub fn stride(&self) -> usize {
        2 * self.d + self.delta
    }

    /// Closed-form number of triplets in a segment of `n` frames.
    pub fn count(&self, n: usize) -> usize {
        if n < self.span() {
            0
        } else {
            (n - self.span()) / self.stride() + 1
        }
    }
}

/// `(i_P, i_Q, i_F)` frame indices relative to the segment start.
pub fn extract_triplets(n_frames: usize, layer: &LayerSpec) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::with_capacity(layer.count(n_frames));
    let mut a = 0;
    while a + layer.span() <= n_frames {
        out.push((a, a + layer.d, a + 2 * layer.d));
        a += layer.stride();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
        })
    }
}

/// Working resolution of a database variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Resolution {
    P1080,
    P720,
    Custom(usize, usize),
}

impl Resolution {
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            Resolution::P1080 => (1920, 1080),
            Resolution::P720 => (1280, 720),
            Resolution::Custom(w, h) => (w, h),
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::P1080 => f.write_str("1080p"),
            Resolution::P720 => f.write_str("720p"),
            Resolution::Custom(w, h) => write!(f, "{w}x{h}"),
        }
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1080p" => Ok(Resolution::P1080),
            "720p" => Ok(Resolution::P720),
            _ => {
                let parsed = s
                    .split_once('x')
                    .and_then(|(w, h)| Some((w.parse::<usize>().ok()?, h.parse::<usize>().ok()?)));
                match parsed {
                    Some((w, h)) if w > 0 && h > 0 => Ok(Resolution::Custom(w, h)),
                    _ => Err(invalid("resolution", format!("{s:?} is not 1080p, 720p or WxH"))),
                }
            }
        }
    }
}

impl Serialize for Resolution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One line of the source manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub format: VideoFormat,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// `[start, end)` frame ranges without scene cuts.
    pub segments: Vec<[usize; 2]>,
    pub partition: Partition,
}

impl ManifestEntry {
    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.segments.clone();
        sorted.sort_unstable();
        for s in &sorted {
            if s[0] >= s[1] || s[1] > self.frames {
                return Err(invalid(
                    "manifest",
                    format!("{}: segment [{}, {}) outside 0..{}", self.id, s[0], s[1], self.frames),
                ));
            }
        }
        if sorted.windows(2).any(|w| w[1][0] < w[0][1]) {
            return Err(invalid("manifest", format!("{}: overlapping segments", self.id)));
        }
        Ok(())
    }
}

/// Parses a JSON-lines manifest; blank lines are ignored. Relative paths
/// resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry =
            serde_json::from_str(line).map_err(|err| invalid("manifest", format!("line {}: {err}", i + 1)))?;
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
        out.push(e);
    }
    let train: BTreeSet<&str> = out
        .iter()
        .filter(|e| e.partition == Partition::Train)
        .map(|e| e.id.as_str())
        .collect();
    if let Some(e) = out
        .iter()
        .find(|e| e.partition == Partition::Val && train.contains(e.id.as_str()))
    {
        return Err(invalid(
            "manifest",
            format!("content {} appears in both partitions", e.id),
        ));
    }
    Ok(out)
}

/// One triplet in the database index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    /// Segment ordinal within its manifest entry.
    pub segment: usize,
    pub ip: usize,
    pub iq: usize,
    #[serde(rename = "if")]
    pub i_f: usize,
    pub layer: u8,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub resolution: Resolution,
    pub partition: Partition,
    pub layer: u8,
    pub triplets: usize,
    pub contents: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    /// Records in manifest order, then resolution, layer and position.
    pub records: Vec<(Partition, TripletRecord)>,
    pub warnings: Vec<String>,
}

impl Database {
    /// Records of layer `k` in one partition at one resolution.
    pub fn set(&self, partition: Partition, k: u8, resolution: Resolution) -> Vec<&TripletRecord> {
        self.records
            .iter()
            .filter(|(p, r)| *p == partition && r.layer == k && r.resolution == resolution)
            .map(|(_, r)| r)
            .collect()
    }

    /// Triplet and content counts per resolution, partition and layer.
    pub fn summary(&self, resolutions: &[Resolution]) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for &res in resolutions {
            for partition in [Partition::Train, Partition::Val] {
                for k in 1..=4u8 {
                    let set = self.set(partition, k, res);
                    let contents: BTreeSet<&str> = set.iter().map(|r| r.id.as_str()).collect();
                    rows.push(SummaryRow {
                        resolution: res,
                        partition,
                        layer: k,
                        triplets: set.len(),
                        contents: contents.len(),
                    });
                }
            }
        }
        rows
    }

    /// Index as JSON lines.
    pub fn index_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for (_, r) in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }
}

fn check_source(e: &ManifestEntry) -> Result<()> {
    e.validate()?;
    let r = LumaReader::open(&e.path, e.format, Some((e.width, e.height)))?;
    if r.frame_count() < e.frames {
        return Err(invalid(
            "manifest",
            format!(
                "{}: manifest declares {} frames, file has {}",
                e.id,
                e.frames,
                r.frame_count()
            ),
        ));
    }
    Ok(())
}

/// Enumerates the triplets of every readable manifest entry for each layer
/// and resolution. Unreadable entries are skipped with a warning.
pub fn build_database(entries: &[ManifestEntry], resolutions: &[Resolution]) -> Database {
    let per_entry: Vec<std::result::Result<Vec<(Partition, TripletRecord)>, String>> = entries
        .par_iter()
        .map(|e| {
            check_source(e).map_err(|err| format!("skipped {}: {err}", e.id))?;
            let mut recs = Vec::new();
            for &res in resolutions {
                for layer in LayerSpec::all() {
                    for (si, seg) in e.segments.iter().enumerate() {
                        for (p, q, f) in extract_triplets(seg[1] - seg[0], &layer) {
                            recs.push((
                                e.partition,
                                TripletRecord {
                                    id: e.id.clone(),
                                    segment: si,
                                    ip: seg[0] + p,
                                    iq: seg[0] + q,
                                    i_f: seg[0] + f,
                                    layer: layer.k,
                                    resolution: res,
                                },
                            ));
                        }
                    }
                }
            }
            Ok(recs)
        })
        .collect();
    let mut db = Database {
        records: Vec::new(),
        warnings: Vec::new(),
    };
    for r in per_entry {
        match r {
            Ok(recs) => db.records.extend(recs),
            Err(w) => {
                log::warn!("{w}");
                db.warnings.push(w);
            }
        }
    }
    db
}

/// Reads, resamples to the record's resolution and pads the three frames of a record.
pub fn load_triplet(entry: &ManifestEntry, record: &TripletRecord) -> Result<FrameTriplet> {
    let mut reader = LumaReader::open(&entry.path, entry.format, Some((entry.width, entry.height)))?;
    let (tw, th) = record.resolution.dims();
    let mut frames = Vec::with_capacity(3);
    let mut orig = (0, 0);
    for i in [record.ip, record.iq, record.i_f] {
        let f = reader.read_frame(i)?;
        let f = lanczos_resize(&f, tw, th)?;
        let (p, w, h) = pad_to_multiple(&f, 64)?;
        orig = (w, h);
        frames.push(p);
    }
    let future = frames.pop().expect("three frames");
    let q = frames.pop().expect("three frames");
    let past = frames.pop().expect("three frames");
    FrameTriplet::new(past, q, future, record.layer, orig.0, orig.1)
}
