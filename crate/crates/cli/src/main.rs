//! `cbtnet`: batch front end for dataset construction, training, validation,
//! prediction, block matching, MV export and analysis.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cbtnet_core::analysis::{bd_rate, temporal_information, visualize_mv, RdPoint};
use cbtnet_core::blockmatch::{block_sad, run_baseline, Algorithm};
use cbtnet_core::checkpoint::Checkpoint;
use cbtnet_core::dataset::{
    build_database, lanczos_resize, load_triplet, pad_to_multiple, parse_manifest, LayerSpec, ManifestEntry, Partition,
    Resolution,
};
use cbtnet_core::model::{CbtNet, CbtNetConfig};
use cbtnet_core::mvcodec::{
    assemble_superblocks, quantize_fields, read_mv_file, scatter_superblocks, MvFileHeader, ORDER_SIZE_MAJOR_RASTER,
};
use cbtnet_core::quality::{mad, ms_ssim, psnr, MsSsimParams};
use cbtnet_core::synthetic::translation_corpus;
use cbtnet_core::training::{loss_csv, table_csv, train, validate, TrainConfig};
use cbtnet_core::video::{encode_y4m, read_luma, LumaReader, VideoFormat};
use cbtnet_core::warp::predict_frames;
use cbtnet_core::{selftest, Frame, FrameTriplet, Mv, MvFieldSet, RefDir, BLOCK_SIZES};

use output::Outputs;

#[derive(Parser, Debug)]
#[command(name = "cbtnet", version, about = "Search-free block motion estimation toolkit")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Triplet database tools.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a model on a manifest or a synthetic translation corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint (and optional baselines) on the validation partition.
    Validate(ValidateArgs),
    /// Predict MV fields and motion-compensated frames for one triplet.
    Predict(PredictArgs),
    /// Per-block matching report for a baseline search or the model.
    Match(MatchArgs),
    /// Quantise MV fields and write them as a CBMV file.
    Export(ExportArgs),
    /// Decode a CBMV file back into MV fields.
    Read(ReadArgs),
    /// Colour-coded MV field images.
    Viz(VizArgs),
    /// MAD, PSNR and MS-SSIM between two videos, and temporal information.
    Metrics(MetricsArgs),
    /// Bjontegaard delta rate between two RD curves.
    Bdrate(BdrateArgs),
    /// Gradient checks and oracle suites.
    Selftest(SelftestArgs),
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum DatasetCommand {
    /// Manifest -> triplet index.
    Build(DatasetBuildArgs),
}

#[derive(Args, Debug, Serialize)]
struct DatasetBuildArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Working resolutions (repeatable).
    #[arg(long = "resolution", default_values = ["1080p", "720p"])]
    resolutions: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SourceArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=4))]
    layer: u8,
    #[arg(long, default_value = "1080p")]
    resolution: String,
    /// Cap on triplets loaded per partition.
    #[arg(long)]
    max_triplets: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Train on this many synthetic translation triplets instead of a manifest.
    #[arg(long, conflicts_with = "manifest")]
    synthetic: Option<usize>,
    /// Side of the synthetic crops.
    #[arg(long, default_value_t = 64)]
    synthetic_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Desk-scale model preset.
    #[arg(long)]
    toy: bool,
    /// Continue from this checkpoint's weights.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    val_every: u64,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ValidateArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Baselines evaluated alongside the model.
    #[arg(long, value_delimiter = ',')]
    algo: Vec<AlgoArg>,
    #[arg(long, default_value_t = 16)]
    range: i32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TripletArgs {
    /// Y4M file, or raw 8-bit luma with --dims.
    #[arg(long)]
    input: PathBuf,
    /// Frame size of a raw input, `WxH`.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=4))]
    layer: u8,
    /// Index of the past reference; the current and future frames follow
    /// at the layer's distance.
    #[arg(long, default_value_t = 0)]
    anchor: usize,
    /// Resample to this resolution before padding (native size otherwise).
    #[arg(long)]
    resolution: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    #[command(flatten)]
    triplet: TripletArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum AlgoArg {
    Es,
    Ds,
    Arps,
    Cbt,
}

impl AlgoArg {
    fn baseline(self) -> Option<Algorithm> {
        match self {
            AlgoArg::Es => Some(Algorithm::Es),
            AlgoArg::Ds => Some(Algorithm::Ds),
            AlgoArg::Arps => Some(Algorithm::Arps),
            AlgoArg::Cbt => None,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct MatchArgs {
    #[command(flatten)]
    triplet: TripletArgs,
    #[arg(long, value_enum)]
    algo: AlgoArg,
    #[arg(long, default_value_t = 16)]
    range: i32,
    /// Model weights, required for `--algo cbt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ExportArgs {
    /// MV field sets (JSON) in frame order.
    #[arg(long, required = true, num_args = 1..)]
    mvs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ReadArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum RefArg {
    P,
    F,
}

#[derive(Args, Debug, Serialize)]
struct VizArgs {
    #[arg(long)]
    mvs: PathBuf,
    /// Block sizes to draw (all by default).
    #[arg(long = "block-size", value_delimiter = ',')]
    block_sizes: Vec<usize>,
    /// References to draw (both by default).
    #[arg(long = "reference", value_enum, value_delimiter = ',')]
    references: Vec<RefArg>,
    /// Pixels per block edge.
    #[arg(long, default_value_t = 1)]
    scale: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct MetricsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Video compared frame by frame against `--input`.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct BdrateArgs {
    /// CSV of `bitrate,quality` rows.
    #[arg(long)]
    anchor: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SelftestArgs {
    /// Model used for the aperture report (a short toy run otherwise).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    seed: Option<u64>,
}

fn run_record(command: &Command, seed: Option<u64>) -> Result<Vec<u8>> {
    let rec = RunRecord {
        tool: "cbtnet",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
    };
    let mut s = serde_json::to_string_pretty(&rec)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s.split_once('x').ok_or_else(|| anyhow!("dims {s:?} are not WxH"))?;
    Ok((w.parse()?, h.parse()?))
}

fn video_format(path: &Path) -> VideoFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("y4m") => VideoFormat::Y4m,
        _ => VideoFormat::Raw,
    }
}

fn open_video(path: &Path, dims: Option<&str>) -> Result<Vec<Frame>> {
    let dims = dims.map(parse_dims).transpose()?;
    Ok(read_luma(path, video_format(path), dims)?)
}

fn load_input_triplet(a: &TripletArgs) -> Result<FrameTriplet> {
    let dims = a.dims.as_deref().map(parse_dims).transpose()?;
    let mut reader = LumaReader::open(&a.input, video_format(&a.input), dims)?;
    let layer = LayerSpec::new(a.layer)?;
    let idx = [a.anchor, a.anchor + layer.d, a.anchor + 2 * layer.d];
    if idx[2] >= reader.frame_count() {
        bail!(
            "{}: layer {} triplet at anchor {} needs frame {}, file has {}",
            a.input.display(),
            a.layer,
            a.anchor,
            idx[2],
            reader.frame_count()
        );
    }
    let target = a.resolution.as_deref().map(str::parse::<Resolution>).transpose()?;
    let mut frames = Vec::with_capacity(3);
    let mut orig = (0, 0);
    for i in idx {
        let mut f = reader.read_frame(i)?;
        if let Some(r) = target {
            let (w, h) = r.dims();
            f = lanczos_resize(&f, w, h)?;
        }
        let (p, w, h) = pad_to_multiple(&f, 64)?;
        orig = (w, h);
        frames.push(p);
    }
    let [past, q, future]: [Frame; 3] = frames.try_into().map_err(|_| anyhow!("three frames"))?;
    Ok(FrameTriplet::new(past, q, future, a.layer, orig.0, orig.1)?)
}

fn load_model(path: &Path) -> Result<CbtNet<f32>> {
    Ok(Checkpoint::load(path)?.model)
}

fn read_mvs(path: &Path) -> Result<MvFieldSet> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let set: MvFieldSet = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    set.validate()?;
    Ok(set)
}

fn mvs_json(set: &MvFieldSet) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(set)?)
}

/// Loads the triplets of one partition for `--layer` / `--resolution`.
fn manifest_triplets(src: &SourceArgs, manifest: &Path, partition: Partition) -> Result<Vec<FrameTriplet>> {
    let text = std::fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base)?;
    let res: Resolution = src.resolution.parse()?;
    let db = build_database(&entries, &[res]);
    for w in &db.warnings {
        eprintln!("warning: {w}");
    }
    let mut set = db.set(partition, src.layer, res);
    if let Some(n) = src.max_triplets {
        set.truncate(n);
    }
    set.iter()
        .map(|r| {
            let e: &ManifestEntry = entries.iter().find(|e| e.id == r.id).expect("record from manifest");
            Ok(load_triplet(e, r)?)
        })
        .collect()
}

fn dataset_build(a: &DatasetBuildArgs, out: &mut Outputs) -> Result<()> {
    let text = std::fs::read_to_string(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    let entries = parse_manifest(&text, a.manifest.parent().unwrap_or(Path::new(".")))?;
    let res = a
        .resolutions
        .iter()
        .map(|r| r.parse::<Resolution>())
        .collect::<cbtnet_core::Result<Vec<_>>>()?;
    let db = build_database(&entries, &res);
    for w in &db.warnings {
        eprintln!("warning: {w}");
    }
    out.write("index.jsonl", db.index_jsonl()?.as_bytes())?;
    let mut csv = String::from("resolution,partition,layer,triplets,contents\n");
    for r in db.summary(&res) {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.resolution, r.partition, r.layer, r.triplets, r.contents
        ));
    }
    print!("{csv}");
    out.write("summary.csv", csv.as_bytes())?;
    if !db.warnings.is_empty() {
        out.write("warnings.txt", (db.warnings.join("\n") + "\n").as_bytes())?;
    }
    Ok(())
}

fn train_cmd(a: &TrainArgs, out: &mut Outputs) -> Result<()> {
    let (train_set, val_set) = match (a.synthetic, &a.source.manifest) {
        (Some(n), _) => {
            let corpus = translation_corpus(n, a.synthetic_size, 8, 4.0, a.seed)?;
            let mut all: Vec<FrameTriplet> = corpus.into_iter().map(|s| s.triplet).collect();
            let n_val = (all.len() / 10).min(100);
            let val = all.split_off(all.len() - n_val);
            (all, val)
        }
        (None, Some(m)) => (
            manifest_triplets(&a.source, m, Partition::Train)?,
            manifest_triplets(&a.source, m, Partition::Val)?,
        ),
        (None, None) => bail!("train needs --manifest or --synthetic"),
    };
    let model = match &a.checkpoint {
        Some(p) => load_model(p)?,
        None => CbtNet::new(
            if a.toy {
                CbtNetConfig::toy()
            } else {
                CbtNetConfig::default()
            },
            a.seed,
        )?,
    };
    let cfg = TrainConfig {
        layer_k: a.source.layer,
        resolution: a.source.resolution.clone(),
        batch_size: a.batch_size,
        lr: a.lr,
        max_steps: a.steps,
        val_every: a.val_every,
        seed: a.seed,
        crop: a.crop,
        ms_ssim: MsSsimParams::default(),
    };
    eprintln!(
        "training on {} triplets, validating on {}",
        train_set.len(),
        val_set.len()
    );
    let outcome = train(model, &train_set, &val_set, &cfg, |r| {
        if r.step % 50 == 0 {
            eprintln!("step {} loss {:.3} dB", r.step, r.loss_db);
        }
    })?;
    out.write("loss.csv", loss_csv(&outcome.history).as_bytes())?;
    if let Some((_, last)) = outcome.validations.last() {
        out.write("validation.csv", last.detail_csv().as_bytes())?;
    }
    out.write("best.cbtn", &outcome.best.to_bytes()?)?;
    out.write("last.cbtn", &outcome.last.to_bytes()?)?;
    if let Some(reason) = &outcome.aborted {
        eprintln!("training stopped early: {reason}");
    }
    Ok(())
}

fn validate_cmd(a: &ValidateArgs, out: &mut Outputs) -> Result<()> {
    let manifest = a
        .source
        .manifest
        .as_deref()
        .ok_or_else(|| anyhow!("validate needs --manifest"))?;
    let model = load_model(&a.checkpoint)?;
    let val = manifest_triplets(&a.source, manifest, Partition::Val)?;
    let algos: Vec<Algorithm> = a.algo.iter().filter_map(|x| x.baseline()).collect();
    let report = validate(&model, &val, &algos, a.range, &MsSsimParams::default())?;
    let mut methods = vec!["cbt"];
    methods.extend(algos.iter().map(|x| x.name()));
    let table = table_csv(&[report.clone()], &methods);
    print!("{table}");
    out.write("table.csv", table.as_bytes())?;
    out.write("validation.csv", report.detail_csv().as_bytes())?;
    Ok(())
}

fn predict_cmd(a: &PredictArgs, out: &mut Outputs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let t = load_input_triplet(&a.triplet)?;
    let mvs = model.predict(&t)?;
    let preds = predict_frames(&t, &mvs)?;
    out.write("mvs.json", &mvs_json(&mvs)?)?;
    let frames: Vec<Frame> = preds.frames.iter().flatten().cloned().collect();
    out.write("predicted.y4m", &encode_y4m(&frames, 1))?;
    Ok(())
}

fn match_cmd(a: &MatchArgs, out: &mut Outputs) -> Result<()> {
    let t = load_input_triplet(&a.triplet)?;
    let mut csv = String::from("block_size,reference,row,col,u,v,sad\n");
    let mvs = match a.algo.baseline() {
        Some(algo) => {
            let run = run_baseline(&t, algo, &BLOCK_SIZES, a.range)?;
            for (s, dir, res) in &run.results {
                let f = &res.field;
                for r in 0..f.rows {
                    for c in 0..f.cols {
                        let mv = f.get(r, c);
                        csv.push_str(&format!(
                            "{s},{},{r},{c},{},{},{}\n",
                            dir.tag(),
                            mv.u,
                            mv.v,
                            res.sad[r * f.cols + c]
                        ));
                    }
                }
            }
            run.mvs
        }
        None => {
            let p = a
                .checkpoint
                .as_deref()
                .ok_or_else(|| anyhow!("--algo cbt needs --checkpoint"))?;
            let mvs = load_model(p)?.predict(&t)?;
            for (&s, field) in BLOCK_SIZES.iter().zip(&mvs.fields) {
                for dir in RefDir::BOTH {
                    let ints = field.to_int(dir);
                    for r in 0..ints.rows {
                        for c in 0..ints.cols {
                            let mv: Mv = ints.get(r, c);
                            let sad = block_sad(&t.q, t.reference(dir), r * s, c * s, s, mv);
                            csv.push_str(&format!("{s},{},{r},{c},{},{},{sad}\n", dir.tag(), mv.u, mv.v));
                        }
                    }
                }
            }
            mvs
        }
    };
    out.write("blocks.csv", csv.as_bytes())?;
    out.write("mvs.json", &mvs_json(&mvs)?)?;
    Ok(())
}

fn export_cmd(a: &ExportArgs, out: &mut Outputs) -> Result<()> {
    let sets = a.mvs.iter().map(|p| read_mvs(p)).collect::<Result<Vec<_>>>()?;
    let (w, h) = (sets[0].width, sets[0].height);
    if let Some(s) = sets.iter().find(|s| (s.width, s.height) != (w, h)) {
        bail!("mixed frame sizes: {w}x{h} and {}x{}", s.width, s.height);
    }
    let packed = sets
        .iter()
        .map(|s| assemble_superblocks(&quantize_fields(s)?))
        .collect::<cbtnet_core::Result<Vec<_>>>()?;
    let header = MvFileHeader {
        width: u32::try_from(w)?,
        height: u32::try_from(h)?,
        ordering: ORDER_SIZE_MAJOR_RASTER,
    };
    out.write("mvs.cbmv", &cbtnet_core::mvcodec::encode_mv_file(&header, &packed)?)?;
    Ok(())
}

fn read_cmd(a: &ReadArgs, out: &mut Outputs) -> Result<()> {
    let (header, frames) = read_mv_file(&a.input)?;
    println!(
        "{}x{}, {} frame(s), ordering {}",
        header.width,
        header.height,
        frames.len(),
        header.ordering
    );
    for (i, f) in frames.iter().enumerate() {
        out.write(&format!("mvs_{i}.json"), &mvs_json(&scatter_superblocks(f)?)?)?;
    }
    Ok(())
}

fn viz_cmd(a: &VizArgs, out: &mut Outputs) -> Result<()> {
    let set = read_mvs(&a.mvs)?;
    let sizes = if a.block_sizes.is_empty() {
        BLOCK_SIZES.to_vec()
    } else {
        a.block_sizes.clone()
    };
    let refs = if a.references.is_empty() {
        vec![RefArg::P, RefArg::F]
    } else {
        a.references.clone()
    };
    for &s in &sizes {
        let field = set.field(s)?;
        for &r in &refs {
            let dir = if r == RefArg::P { RefDir::Past } else { RefDir::Future };
            let img = visualize_mv(field, dir, a.scale);
            out.write(&format!("mv_{s}_{}.ppm", dir.tag()), &img.to_ppm())?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricsSummary {
    frames: usize,
    temporal_information: Option<f64>,
    mean_mad: Option<f64>,
    mean_psnr: Option<f64>,
    mean_ms_ssim: Option<f64>,
}

fn metrics_cmd(a: &MetricsArgs, out: &mut Outputs) -> Result<()> {
    let frames = open_video(&a.input, a.dims.as_deref())?;
    let ti = if frames.len() >= 2 {
        Some(temporal_information(&frames)?)
    } else {
        None
    };
    let mut summary = MetricsSummary {
        frames: frames.len(),
        temporal_information: ti,
        mean_mad: None,
        mean_psnr: None,
        mean_ms_ssim: None,
    };
    if let Some(rp) = &a.reference {
        let refs = open_video(rp, a.dims.as_deref())?;
        if refs.len() != frames.len() {
            bail!(
                "{} has {} frames, {} has {}",
                a.input.display(),
                frames.len(),
                rp.display(),
                refs.len()
            );
        }
        let p = MsSsimParams::default();
        let mut csv = String::from("frame,mad,psnr,ms_ssim\n");
        let (mut sm, mut sp, mut ss) = (0.0, 0.0, 0.0);
        for (i, (f, r)) in frames.iter().zip(&refs).enumerate() {
            let (m, ps, s) = (mad(f, r)?, psnr(f, r, 255.0)?, ms_ssim(f, r, &p)?);
            csv.push_str(&format!("{i},{m},{ps},{s}\n"));
            sm += m;
            sp += ps;
            ss += s;
        }
        let n = frames.len().max(1) as f64;
        summary.mean_mad = Some(sm / n);
        summary.mean_psnr = Some(sp / n);
        summary.mean_ms_ssim = Some(ss / n);
        out.write("metrics.csv", csv.as_bytes())?;
    }
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    print!("{json}");
    out.write("metrics.json", json.as_bytes())?;
    Ok(())
}

fn read_curve(path: &Path) -> Result<Vec<RdPoint>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(r), Some(q)) = (cols.next(), cols.next()) else {
            bail!("{}:{}: expected bitrate,quality", path.display(), i + 1);
        };
        match (r.parse::<f64>(), q.parse::<f64>()) {
            (Ok(bitrate), Ok(quality)) => pts.push(RdPoint { bitrate, quality }),
            _ if pts.is_empty() && i == 0 => continue, // header
            _ => bail!("{}:{}: expected bitrate,quality", path.display(), i + 1),
        }
    }
    Ok(pts)
}

fn bdrate_cmd(a: &BdrateArgs, out: &mut Outputs) -> Result<()> {
    let v = bd_rate(&read_curve(&a.anchor)?, &read_curve(&a.test)?)?;
    println!("{v:.3}");
    if a.out.is_some() {
        out.write("bdrate.txt", format!("{v:.3}\n").as_bytes())?;
    }
    Ok(())
}

fn selftest_cmd(a: &SelftestArgs, out: &mut Outputs) -> Result<bool> {
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    let results = selftest::run_all(model.as_ref());
    for r in &results {
        println!(
            "{:<16} {} [{:.1}s] {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        );
    }
    if a.out.is_some() {
        out.write("selftest.json", &serde_json::to_vec_pretty(&results)?)?;
    }
    Ok(results.iter().all(|r| r.passed))
}

fn out_dir(command: &Command) -> Option<&Path> {
    match command {
        Command::Dataset(DatasetCommand::Build(a)) => Some(&a.out),
        Command::Train(a) => Some(&a.out),
        Command::Validate(a) => Some(&a.out),
        Command::Predict(a) => Some(&a.out),
        Command::Match(a) => Some(&a.out),
        Command::Export(a) => Some(&a.out),
        Command::Read(a) => Some(&a.out),
        Command::Viz(a) => Some(&a.out),
        Command::Metrics(a) => Some(&a.out),
        Command::Bdrate(a) => a.out.as_deref(),
        Command::Selftest(a) => a.out.as_deref(),
    }
}

fn seed(command: &Command) -> Option<u64> {
    match command {
        Command::Train(a) => Some(a.seed),
        _ => None,
    }
}

/// Runs the command; `Ok(false)` means it completed but reported failures.
fn dispatch(command: &Command, out: &mut Outputs) -> Result<bool> {
    match command {
        Command::Dataset(DatasetCommand::Build(a)) => dataset_build(a, out)?,
        Command::Train(a) => train_cmd(a, out)?,
        Command::Validate(a) => validate_cmd(a, out)?,
        Command::Predict(a) => predict_cmd(a, out)?,
        Command::Match(a) => match_cmd(a, out)?,
        Command::Export(a) => export_cmd(a, out)?,
        Command::Read(a) => read_cmd(a, out)?,
        Command::Viz(a) => viz_cmd(a, out)?,
        Command::Metrics(a) => metrics_cmd(a, out)?,
        Command::Bdrate(a) => bdrate_cmd(a, out)?,
        Command::Selftest(a) => return selftest_cmd(a, out),
    }
    Ok(true)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut out = Outputs::new(out_dir(&cli.command))?;
    let result = dispatch(&cli.command, &mut out).and_then(|ok| {
        if out.is_active() {
            out.write("run.json", &run_record(&cli.command, seed(&cli.command))?)?;
        }
        Ok(ok)
    });
    match result {
        Ok(ok) => {
            out.commit();
            Ok(ok)
        }
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
