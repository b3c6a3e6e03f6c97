//! Command-line front end. Every command prints one JSON document to
//! stdout; diagnostics go to stderr; tensors and masks travel as `.cft`
//! files. The run-config JSON schema is [`RunConfig`]; `bench` and `cost`
//! take the smaller [`BenchConfig`] shape instead.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cffm_core::cost::{self, CostModel};
use cffm_core::harness::benchmark::{self, BenchConfig};
use cffm_core::harness::clip::{gen_clip, IGNORE_LABEL};
use cffm_core::harness::config::{Precision, RunConfig};
use cffm_core::harness::gradcheck;
use cffm_core::harness::model::{checkpoint_config, load_checkpoint, Model};
use cffm_core::harness::stream::{recompute_segment, stream_segment};
use cffm_core::harness::train::train_toy;
use cffm_core::metrics::{iou_report, vc_n, MaskSequence, MetricReport, VcReport};
use cffm_core::tensor::graph::ParamSet;
use cffm_core::tensor::rng::Rng;
use cffm_core::tensor::{io, Scalar};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cffm", version, about = "Coarse-to-fine video context toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clip as frame_NNNN.cft / mask_NNNN.cft files.
    Gen(GenArgs),
    /// Train the toy segmentation model on synthetic clips.
    TrainToy(TrainToyArgs),
    /// Verify cached streaming against full recomputation.
    Stream(StreamArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Time the mining forward pass against dense self-attention.
    Bench(BenchArgs),
    /// Report exact multiply counts for both attention styles.
    Cost(CostArgs),
    /// Score predicted masks against ground truth (consistency and IoU).
    EvalVc(EvalVcArgs),
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gen(args) => run_gen(args),
        Command::TrainToy(args) => run_train_toy(args),
        Command::Stream(args) => run_stream(args),
        Command::Gradcheck(args) => run_gradcheck(args),
        Command::Bench(args) => run_bench(args),
        Command::Cost(args) => run_cost(args),
        Command::EvalVc(args) => run_eval_vc(args),
    }
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("read {}", p.display()))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::toy(),
    };
    for warning in cfg.validate()? {
        eprintln!("warning: {warning}");
    }
    Ok(cfg)
}

fn load_bench_config(path: Option<&Path>, smoke: bool) -> Result<BenchConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("read {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("bad bench config {}", p.display()))?
        }
        None if smoke => BenchConfig::smoke(),
        None => BenchConfig::standard(),
    };
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    if let Err(e) = writeln!(std::io::stdout(), "{text}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            // Downstream closed early (e.g. piped into head); die the way
            // SIGPIPE would have killed us.
            std::process::exit(141);
        }
        eprintln!("error: write stdout: {e}");
        std::process::exit(1);
    }
}

#[derive(Args)]
struct GenArgs {
    /// Run config JSON; only the clip section drives generation.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the clip seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Target directory for the .cft files and clip.json summary.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct GenSummary {
    frames: usize,
    height: usize,
    width: usize,
    classes: usize,
    ignore_label: u8,
    precision: Precision,
    seed: u64,
    dir: String,
}

fn run_gen(args: GenArgs) -> Result<ExitCode> {
    let mut cfg = load_run_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.clip.seed = seed;
    }
    fs::create_dir_all(&args.out).with_context(|| format!("create {}", args.out.display()))?;
    match cfg.precision {
        Precision::F32 => write_clip::<f32>(&cfg, &args.out)?,
        Precision::F64 => write_clip::<f64>(&cfg, &args.out)?,
    }
    let summary = GenSummary {
        frames: cfg.clip.frames,
        height: cfg.clip.height,
        width: cfg.clip.width,
        classes: cfg.clip.classes,
        ignore_label: IGNORE_LABEL,
        precision: cfg.precision,
        seed: cfg.clip.seed,
        dir: args.out.display().to_string(),
    };
    fs::write(
        args.out.join("clip.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    print_json(&summary);
    Ok(ExitCode::SUCCESS)
}

fn write_clip<T: Scalar>(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let frames_dir = dir.join("frames");
    let masks_dir = dir.join("masks");
    fs::create_dir_all(&frames_dir)?;
    fs::create_dir_all(&masks_dir)?;
    let clip = gen_clip::<T>(&cfg.clip)?;
    let (h, w) = clip.masks.extents();
    for (t, frame) in clip.frames.iter().enumerate() {
        io::write_tensor(&frames_dir.join(format!("frame_{t:04}.cft")), frame)?;
        io::write_mask(&masks_dir.join(format!("mask_{t:04}.cft")), &[h, w], clip.masks.frame(t))?;
    }
    Ok(())
}

#[derive(Args)]
struct TrainToyArgs {
    /// Run config JSON (defaults to the built-in toy configuration).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint directory (manifest.json plus parameter tensors).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_train_toy(args: TrainToyArgs) -> Result<ExitCode> {
    let mut cfg = load_run_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let report = match cfg.precision {
        Precision::F32 => train_toy::<f32>(cfg, args.out.as_deref())?.0,
        Precision::F64 => train_toy::<f64>(cfg, args.out.as_deref())?.0,
    };
    print_json(&report);
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct StreamArgs {
    /// Run config JSON for a freshly initialized model.
    #[arg(long, conflicts_with = "checkpoint")]
    config: Option<PathBuf>,
    /// Load config and parameters from a checkpoint directory instead.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Override the run and clip seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct StreamReport {
    frames: usize,
    encoder_calls: usize,
    bitwise_equal: bool,
    max_abs_diff: f64,
}

fn run_stream(args: StreamArgs) -> Result<ExitCode> {
    let cfg = match &args.checkpoint {
        Some(dir) => checkpoint_config(dir)?,
        None => load_run_config(args.config.as_deref())?,
    };
    let report = match cfg.precision {
        Precision::F32 => stream_once::<f32>(cfg, args.checkpoint.as_deref(), args.seed)?,
        Precision::F64 => stream_once::<f64>(cfg, args.checkpoint.as_deref(), args.seed)?,
    };
    print_json(&report);
    Ok(if report.bitwise_equal { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn stream_once<T: Scalar>(
    mut cfg: RunConfig,
    checkpoint: Option<&Path>,
    seed: Option<u64>,
) -> Result<StreamReport> {
    if let Some(seed) = seed {
        cfg.seed = seed;
        cfg.clip.seed = seed;
    }
    let (params, model): (ParamSet<T>, Model) = match checkpoint {
        Some(dir) => {
            let (_, params, model) = load_checkpoint(dir)?;
            (params, model)
        }
        None => {
            let mut params = ParamSet::new();
            let mut rng = Rng::substream(cfg.seed, "model.init");
            let model = Model::init(&mut params, &mut rng, &cfg)?;
            (params, model)
        }
    };
    let clip = gen_clip::<T>(&cfg.clip)?;
    let streamed = stream_segment(&model, &params, &clip.frames)?;
    let recomputed = recompute_segment(&model, &params, &clip.frames)?;
    let mut max_abs_diff = 0.0f64;
    let mut bitwise_equal = streamed.logits.len() == recomputed.len();
    for (a, b) in streamed.logits.iter().zip(&recomputed) {
        bitwise_equal &= a == b;
        for (&x, &y) in a.data().iter().zip(b.data()) {
            max_abs_diff = max_abs_diff.max((x.as_f64() - y.as_f64()).abs());
        }
    }
    Ok(StreamReport {
        frames: clip.frames.len(),
        encoder_calls: streamed.encoder_calls,
        bitwise_equal,
        max_abs_diff,
    })
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the checked pipeline's initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let report = gradcheck::run(args.seed)?;
    print_json(&report);
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

#[derive(Args)]
struct BenchArgs {
    /// Bench config JSON (shape, schedule, repetitions).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the milliseconds-scale smoke shape.
    #[arg(long)]
    smoke: bool,
    /// Override the repetition count.
    #[arg(long)]
    reps: Option<usize>,
    /// Also count multiplies with the instrumented kernels (slower).
    #[arg(long)]
    measure: bool,
    /// Element type used for the timed forwards.
    #[arg(long, default_value = "f32", value_parser = ["f32", "f64"])]
    precision: String,
    /// Override the parameter/input seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn run_bench(args: BenchArgs) -> Result<ExitCode> {
    let mut cfg = load_bench_config(args.config.as_deref(), args.smoke)?;
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.measure_multiplies |= args.measure;
    let report = match args.precision.as_str() {
        "f64" => benchmark::run::<f64>(&cfg)?,
        _ => benchmark::run::<f32>(&cfg)?,
    };
    print_json(&report);
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct CostArgs {
    /// Bench config JSON describing the compared shape.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the milliseconds-scale smoke shape.
    #[arg(long)]
    smoke: bool,
    /// Run instrumented forwards and include measured multiply counts.
    #[arg(long)]
    measure: bool,
    /// Seed for the instrumented forwards.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_cost(args: CostArgs) -> Result<ExitCode> {
    let cfg = load_bench_config(args.config.as_deref(), args.smoke)?;
    let model =
        CostModel::from_schedule(&cfg.schedule, cfg.h, cfg.w, cfg.c, cfg.layers, cfg.heads)?;
    let report = if args.measure {
        cost::measured_report(&model, args.seed, true)?
    } else {
        cost::report(&model)?
    };
    print_json(&report);
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct EvalVcArgs {
    /// Ground-truth directory: .cft u8 masks, or one subdirectory per video.
    #[arg(long)]
    gt: PathBuf,
    /// Prediction directory with the same layout as --gt.
    #[arg(long)]
    pred: PathBuf,
    /// Comma-separated consistency window sizes.
    #[arg(long, default_value = "8,16")]
    n: String,
    /// Require the stable predicted label to match the stable GT label.
    #[arg(long)]
    strict: bool,
}

fn run_eval_vc(args: EvalVcArgs) -> Result<ExitCode> {
    let ns = parse_window_sizes(&args.n)?;
    let gt_videos = read_mask_tree(&args.gt)?;
    let pred_videos = read_mask_tree(&args.pred)?;
    if gt_videos.len() != pred_videos.len() {
        bail!(
            "{} ground-truth videos vs {} predicted ({} / {})",
            gt_videos.len(),
            pred_videos.len(),
            args.gt.display(),
            args.pred.display()
        );
    }
    let classes = mask_classes(gt_videos.iter().chain(&pred_videos));
    let gt: Vec<MaskSequence> = gt_videos.into_iter().map(|v| v.into_sequence(classes)).collect::<Result<_>>()?;
    let pred: Vec<MaskSequence> = pred_videos.into_iter().map(|v| v.into_sequence(classes)).collect::<Result<_>>()?;

    let mut report = MetricReport::default();
    for &n in &ns {
        let mut per_video = Vec::with_capacity(gt.len());
        for (g, p) in gt.iter().zip(&pred) {
            per_video.push(vc_n(g, p, n, args.strict)?);
        }
        let defined: Vec<f64> = per_video.iter().filter_map(|v| *v).collect();
        let mvc = if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        };
        report.vc.push(VcReport { n, strict: args.strict, per_video, mvc });
    }
    report.iou = pooled_iou(&gt, &pred)?;
    print_json(&report);
    Ok(ExitCode::SUCCESS)
}

fn parse_window_sizes(text: &str) -> Result<Vec<usize>> {
    let mut ns = Vec::new();
    for part in text.split(',') {
        let n: usize = part.trim().parse().with_context(|| format!("bad window size {part:?}"))?;
        if n == 0 {
            bail!("window size must be >= 1");
        }
        ns.push(n);
    }
    if ns.is_empty() {
        bail!("no window sizes given");
    }
    Ok(ns)
}

/// One video's frames read off disk, before label-range validation.
struct RawVideo {
    frames: Vec<Vec<u8>>,
    h: usize,
    w: usize,
}

impl RawVideo {
    fn into_sequence(self, classes: usize) -> Result<MaskSequence> {
        Ok(MaskSequence::new(self.frames, self.h, self.w, classes, IGNORE_LABEL)?)
    }
}

/// Reads a directory of per-video subdirectories, or a flat directory as a
/// single video. Frames order by file name; every mask must be a rank-2 u8
/// tensor of one shared extent.
fn read_mask_tree(root: &Path) -> Result<Vec<RawVideo>> {
    let mut subdirs: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("read {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    if subdirs.is_empty() {
        return Ok(vec![read_video(root)?]);
    }
    subdirs.sort();
    subdirs.into_iter().map(|d| read_video(&d)).collect()
}

fn read_video(dir: &Path) -> Result<RawVideo> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("read {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cft"))
        .collect();
    if files.is_empty() {
        bail!("no .cft masks in {}", dir.display());
    }
    files.sort();
    let mut frames = Vec::with_capacity(files.len());
    let mut extents = None;
    for file in &files {
        let (shape, data) = io::read_mask(file)?;
        let [h, w] = shape[..] else {
            bail!("{}: mask must be rank 2, got shape {shape:?}", file.display());
        };
        if *extents.get_or_insert((h, w)) != (h, w) {
            bail!("{}: extent {h}x{w} differs from earlier frames", file.display());
        }
        frames.push(data);
    }
    let (h, w) = extents.expect("at least one frame");
    Ok(RawVideo { frames, h, w })
}

/// Smallest class count covering every non-ignore label.
fn mask_classes<'a>(videos: impl Iterator<Item = &'a RawVideo>) -> usize {
    let max = videos
        .flat_map(|v| v.frames.iter())
        .flat_map(|f| f.iter().copied())
        .filter(|&l| l != IGNORE_LABEL)
        .max()
        .unwrap_or(0);
    max as usize + 1
}

/// Confusion IoU pooled over all videos, when they share extents. Videos of
/// different sizes cannot share one confusion pool here, so IoU is omitted
/// and only the consistency scores are reported.
fn pooled_iou(gt: &[MaskSequence], pred: &[MaskSequence]) -> Result<Option<cffm_core::metrics::IouReport>> {
    let (h, w) = gt[0].extents();
    if gt.iter().any(|g| g.extents() != (h, w)) {
        eprintln!("note: videos differ in extents; IoU omitted");
        return Ok(None);
    }
    let classes = gt[0].classes().max(pred[0].classes());
    let mut gt_frames = Vec::new();
    let mut pred_frames = Vec::new();
    for (g, p) in gt.iter().zip(pred) {
        for i in 0..g.len() {
            gt_frames.push(g.frame(i).to_vec());
        }
        for i in 0..p.len() {
            pred_frames.push(p.frame(i).to_vec());
        }
    }
    let gt_all = MaskSequence::new(gt_frames, h, w, classes, IGNORE_LABEL)?;
    let pred_all = MaskSequence::new(pred_frames, h, w, classes, IGNORE_LABEL)?;
    Ok(Some(iou_report(&gt_all, &pred_all)?))
}
