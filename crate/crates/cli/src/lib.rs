//! Command-line frontend: argument parsing, subcommand dispatch, prediction
//! files and figure output.
//!
//! Exit codes: `0` on success, `1` for runtime failures (reported as
//! `error[<category>]: <message>`), `2` for usage errors.

pub mod plot;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use image::RgbImage;
use serde::Serialize;

use textcontour::checkpoint::load_checkpoint;
use textcontour::datasets::{
    dataset_pairs, generate_synthetic, list_images, load_image, read_icdar_gt, save_dataset,
    SynthConfig, MANIFEST_FILE,
};
use textcontour::eval::{
    default_thresholds, format_summary, format_table, parse_table, sweep_iou, EvalResult,
};
use textcontour::geometry::Detection;
use textcontour::postprocess::{format_predictions, parse_predictions, MergeMode};
use textcontour::targets::{build_targets, AnnotatedImage, Instance, TargetConfig, TargetMaps};
use textcontour::training::{
    pad_to_multiple, predict_image, read_log, train, RunConfig, TrainOptions, TrainOutcome,
};
use textcontour::{Coord, Error, Real};

use plot::{heatmap, line_chart, Canvas, ChartSpec, Series, BLUE, GREEN, RED};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Contour-assisted scene text detection: synthesize data, train, predict, evaluate and plot.
#[derive(Debug, Parser)]
#[command(name = "textcontour", version)]
pub struct Cli {
    /// Make outputs byte-reproducible: load batches on a single worker and leave wall-clock
    /// timings out of every printed line and written file.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Diagnostic log level on stderr (off, error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn", value_name = "LEVEL")]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a TOML run configuration.
    Train(TrainArgs),
    /// Detect text in every image of a directory and write one prediction file per image.
    Predict(PredictArgs),
    /// Score prediction files against ground truth at one or more IoU thresholds.
    Eval(EvalArgs),
    /// Precision/recall/F1 as a function of the IoU matching threshold.
    SweepIou(SweepArgs),
    /// Generate a synthetic word-image dataset with ground-truth files.
    Synth(SynthArgs),
    /// Write the training targets of a dataset as images plus a raw JSON array per image.
    RenderTargets(RenderArgs),
    /// Render a figure as PNG.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML); every key is optional and defaults are documented in the README.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Overrides `output_dir` of the configuration.
    #[arg(long, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Overrides `seed` of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run of the same configuration.
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
    /// Stop once this many global steps have completed.
    #[arg(long, value_name = "N")]
    pub max_steps: Option<u64>,
    /// Floating-point precision of weights and activations.
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    pub dtype: Dtype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum MergeArg {
    Standard,
    LocalityAware,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Directory of images (a dataset root with an `images/` subdirectory also works).
    #[arg(long, value_name = "DIR")]
    pub input_dir: PathBuf,
    /// Receives `<image stem>.txt` prediction files (and overlays when requested).
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Minimum score of a pixel to emit a box (default from the checkpoint's configuration).
    #[arg(long)]
    pub score_threshold: Option<f64>,
    /// IoU above which overlapping boxes are suppressed (default from the checkpoint's configuration).
    #[arg(long)]
    pub nms_iou: Option<f64>,
    /// Suppression strategy (default from the checkpoint's configuration).
    #[arg(long, value_enum)]
    pub merge_mode: Option<MergeArg>,
    /// Also write `<stem>_overlay.png` with the detected boxes drawn on the image.
    #[arg(long)]
    pub overlay: bool,
    /// Tint overlays with the predicted contour map (ignored for models without a contour task).
    #[arg(long)]
    pub contour_overlay: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of prediction files (`<stem>.txt` or `res_<stem>.txt`).
    #[arg(long, value_name = "DIR")]
    pub pred_dir: PathBuf,
    /// Dataset root written by `synth`, or a directory of `gt_<stem>.txt` files.
    #[arg(long, value_name = "DIR")]
    pub gt_dir: PathBuf,
    /// Comma-separated ascending IoU thresholds; the first one gives the headline numbers.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub thresholds: Vec<f64>,
    /// Write the per-threshold table as CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Directory of prediction files (`<stem>.txt` or `res_<stem>.txt`).
    #[arg(long, value_name = "DIR")]
    pub pred_dir: PathBuf,
    /// Dataset root written by `synth`, or a directory of `gt_<stem>.txt` files.
    #[arg(long, value_name = "DIR")]
    pub gt_dir: PathBuf,
    /// Comma-separated ascending IoU thresholds [default: 0.5,0.55,...,0.9].
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Write the sweep table as CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Also render the F1-vs-IoU figure to this PNG.
    #[arg(long, value_name = "FILE")]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator settings (TOML); omitted keys take their defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset root to create (`images/`, `gt/`, `manifest.json`).
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Number of images.
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Overrides `seed` of the generator settings.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Dataset root (manifest or `<name>.<ext>` / `gt_<name>.txt` pairs).
    #[arg(long, value_name = "DIR")]
    pub data_dir: PathBuf,
    /// Receives `<stem>_contour.png`, `<stem>_overlay.png` and `<stem>_targets.json`.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Run configuration whose `[targets]` section is used (defaults otherwise).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Render at most this many images.
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PlotKind {
    /// Loss components against step, from a training log.
    LossCurves,
    /// Precision, recall and F1 against IoU threshold, from a sweep table.
    F1VsIou,
    /// Contour band, score map and ignore mask over an image.
    TargetOverlay,
    /// Predicted (red) and ground-truth (green) boxes over an image.
    DetectionOverlay,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Figure type.
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Input table: the training log CSV (loss_curves) or the sweep CSV (f1_vs_iou).
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// Image to draw on (target_overlay, detection_overlay).
    #[arg(long, value_name = "FILE")]
    pub image: Option<PathBuf>,
    /// Ground-truth file (required for target_overlay, optional for detection_overlay).
    #[arg(long, value_name = "FILE")]
    pub gt: Option<PathBuf>,
    /// Prediction file (detection_overlay).
    #[arg(long, value_name = "FILE")]
    pub pred: Option<PathBuf>,
    /// Output PNG.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

type CliResult<T> = Result<T, CliError>;

struct Ctx<'a> {
    deterministic: bool,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn say(&mut self, line: &str) -> CliResult<()> {
        writeln!(self.out, "{line}").map_err(|e| io_err("<stdout>", e))?;
        Ok(())
    }

    fn warn(&mut self, line: &str) {
        // Warnings are best effort: a closed stderr must not fail the command.
        let _ = writeln!(self.err, "warning: {line}");
    }

    /// ` in 12.3s`, or nothing in deterministic mode.
    fn timing(&self, seconds: f64) -> String {
        if self.deterministic {
            String::new()
        } else {
            format!(" in {seconds:.1}s")
        }
    }
}

fn io_err(path: impl AsRef<Path>, source: std::io::Error) -> Error {
    Error::Io {
        path: path.as_ref().display().to_string(),
        source,
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    Ok(())
}

fn save_png(img: &RgbImage, path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.display().to_string(),
            source: e,
        })?;
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    // A second initialization (several runs in one process) keeps the first logger.
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();
    let mut ctx = Ctx {
        deterministic: cli.deterministic,
        out,
        err,
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, &mut ctx),
        Command::Predict(a) => cmd_predict(a, &mut ctx),
        Command::Eval(a) => cmd_eval(a, &mut ctx),
        Command::SweepIou(a) => cmd_sweep(a, &mut ctx),
        Command::Synth(a) => cmd_synth(a, &mut ctx),
        Command::RenderTargets(a) => cmd_render_targets(a, &mut ctx),
        Command::Plot(a) => cmd_plot(a, &mut ctx),
    };
    let _ = ctx.out.flush();
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(
                ctx.err,
                "error: {msg}\n\nFor more information, try '--help'."
            );
            EXIT_USAGE
        }
        Err(CliError::Run(e)) => {
            let _ = writeln!(ctx.err, "error[{}]: {e}", e.category());
            EXIT_RUNTIME
        }
    }
}

fn cmd_train(a: &TrainArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if ctx.deterministic {
        cfg.prefetch_workers = 1;
    }
    let opts = TrainOptions {
        resume: a.resume.clone(),
        max_steps: a.max_steps,
    };
    let outcome: TrainOutcome = match a.dtype {
        Dtype::F32 => train::<f32>(&cfg, &opts)?,
        Dtype::F64 => train::<f64>(&cfg, &opts)?,
    };
    let n = cfg.stages.len();
    for (i, st) in cfg.stages.iter().enumerate() {
        let recs: Vec<_> = outcome.records.iter().filter(|r| r.stage == i).collect();
        let (Some(first), Some(last)) = (recs.first(), recs.last()) else {
            continue;
        };
        ctx.say(&format!(
            "train stage {}/{n}: input {} lr {:e} steps {}..{} l_total {:.4} -> {:.4}",
            i + 1,
            st.input_size,
            st.learning_rate,
            first.step,
            last.step + 1,
            first.report.l_total,
            last.report.l_total
        ))?;
    }
    let early = match (outcome.stopped_early, outcome.evaluations.last()) {
        (true, Some((_, f1))) => format!(" (stopped early at train F1 {f1:.3})"),
        _ => String::new(),
    };
    ctx.say(&format!(
        "train: {} {} steps{early} -> {}{}",
        cfg.variant,
        outcome.steps,
        outcome.checkpoint.display(),
        ctx.timing(outcome.seconds)
    ))
}

/// `dir/images` when `dir` is a dataset root, else `dir`.
fn image_dir(dir: &Path) -> PathBuf {
    let sub = dir.join("images");
    if sub.is_dir()
        && (dir.join(MANIFEST_FILE).is_file()
            || list_images(dir).map(|v| v.is_empty()).unwrap_or(false))
    {
        sub
    } else {
        dir.to_path_buf()
    }
}

fn cmd_predict(a: &PredictArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let ck = load_checkpoint::<Real>(&a.checkpoint)?;
    let mut decode = ck.header.config.decode;
    if let Some(t) = a.score_threshold {
        decode.score_threshold = t;
    }
    if let Some(t) = a.nms_iou {
        decode.nms_iou = t;
    }
    if let Some(m) = a.merge_mode {
        decode.merge_mode = match m {
            MergeArg::Standard => MergeMode::Standard,
            MergeArg::LocalityAware => MergeMode::LocalityAware,
        };
    }
    decode.validate()?;
    let contour_overlay = a.contour_overlay && ck.network.variant.has_contour();
    if a.contour_overlay && !contour_overlay {
        ctx.warn(&format!(
            "--contour-overlay ignored: the {} model has no contour output",
            ck.network.variant
        ));
    }
    let dir = image_dir(&a.input_dir);
    let images = list_images(&dir)?;
    if images.is_empty() {
        return Err(Error::Data(format!("{}: no images found", dir.display())).into());
    }
    let mut total = 0;
    for path in &images {
        let img = load_image(path)?;
        let pred = predict_image(&ck.network, &img, &decode)?;
        let name = stem(path);
        write_file(
            &a.out_dir.join(format!("{name}.txt")),
            format_predictions(&pred.detections),
        )?;
        if a.overlay || contour_overlay {
            let mut c = Canvas::from_image(img);
            if let (true, Some(g)) = (contour_overlay, &pred.contour) {
                c.overlay_map(g, textcontour::model::OUTPUT_STRIDE as u32, RED, 0.6);
            }
            if a.overlay {
                for d in &pred.detections {
                    c.quad(&d.quad, 1.0, GREEN, 2);
                }
            }
            save_png(&c.img, &a.out_dir.join(format!("{name}_overlay.png")))?;
        }
        total += pred.detections.len();
    }
    ctx.say(&format!(
        "predict: {} images, {total} detections -> {}",
        images.len(),
        a.out_dir.display()
    ))
}

/// Ground-truth files keyed by image stem, in a stable order.
fn ground_truth_files(gt_dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    if gt_dir.join(MANIFEST_FILE).is_file() || gt_dir.join("images").is_dir() {
        return Ok(dataset_pairs(gt_dir)?
            .into_iter()
            .map(|(img, gt)| (stem(&img), gt))
            .collect());
    }
    let mut out = Vec::new();
    for e in fs::read_dir(gt_dir).map_err(|e| io_err(gt_dir, e))? {
        let p = e.map_err(|e| io_err(gt_dir, e))?.path();
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if let Some(key) = name
            .strip_prefix("gt_")
            .and_then(|n| n.strip_suffix(".txt"))
        {
            out.push((key.to_string(), p));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!(
            "{}: no gt_<name>.txt files found",
            gt_dir.display()
        ))
        .into());
    }
    Ok(out)
}

type EvalInputs = (Vec<Vec<Detection<Coord>>>, Vec<Vec<Instance<Coord>>>);

fn load_eval_inputs(pred_dir: &Path, gt_dir: &Path, ctx: &mut Ctx<'_>) -> CliResult<EvalInputs> {
    if !pred_dir.is_dir() {
        return Err(io_err(
            pred_dir,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "prediction directory not found",
            ),
        )
        .into());
    }
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for (key, gt_path) in ground_truth_files(gt_dir)? {
        gts.push(read_icdar_gt::<Coord>(&gt_path)?);
        let candidates = [
            pred_dir.join(format!("{key}.txt")),
            pred_dir.join(format!("res_{key}.txt")),
        ];
        match candidates.iter().find(|p| p.is_file()) {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                dets.push(parse_predictions::<Coord>(&text, &p.display().to_string())?);
            }
            None => {
                ctx.warn(&format!(
                    "no prediction file for `{key}`; counting it as no detections"
                ));
                dets.push(Vec::new());
            }
        }
    }
    Ok((dets, gts))
}

fn headline(res: &EvalResult) -> String {
    let c = &res.counts;
    format!(
        "P {:.4} R {:.4} F1 {:.4} @ IoU {:.2} (tp {}, fp {}, gt {})",
        res.precision, res.recall, res.f1, res.per_threshold[0].iou_threshold, c.tp, c.fp, c.num_gt
    )
}

fn cmd_eval(a: &EvalArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let (dets, gts) = load_eval_inputs(&a.pred_dir, &a.gt_dir, ctx)?;
    let res = sweep_iou(&dets, &gts, &a.thresholds)?;
    if let Some(out) = &a.out {
        write_file(out, format_table(&res.per_threshold))?;
    }
    if res.per_threshold.len() > 1 {
        write!(ctx.out, "{}", format_summary(&res)).map_err(|e| io_err("<stdout>", e))?;
    }
    ctx.say(&format!("eval: {} images, {}", gts.len(), headline(&res)))
}

fn f1_chart(rows: &[textcontour::eval::ThresholdRow]) -> RgbImage {
    let series = |name: &str, f: fn(&textcontour::eval::ThresholdRow) -> f64| Series {
        name: name.into(),
        points: rows.iter().map(|r| (r.iou_threshold, f(r))).collect(),
    };
    line_chart(
        &[
            series("F1", |r| r.f1),
            series("precision", |r| r.precision),
            series("recall", |r| r.recall),
        ],
        &ChartSpec {
            title: "F1 vs IoU threshold",
            x_label: "IoU threshold",
            y_label: "score",
            log_y: false,
            y_range: Some((0.0, 1.0)),
        },
    )
}

fn cmd_sweep(a: &SweepArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let thresholds = a.thresholds.clone().unwrap_or_else(default_thresholds);
    let (dets, gts) = load_eval_inputs(&a.pred_dir, &a.gt_dir, ctx)?;
    let res = sweep_iou(&dets, &gts, &thresholds)?;
    if let Some(out) = &a.out {
        write_file(out, format_table(&res.per_threshold))?;
    }
    if let Some(png) = &a.plot {
        save_png(&f1_chart(&res.per_threshold), png)?;
    }
    write!(ctx.out, "{}", format_summary(&res)).map_err(|e| io_err("<stdout>", e))?;
    let (first, last) = (
        &res.per_threshold[0],
        res.per_threshold.last().expect("non-empty"),
    );
    ctx.say(&format!(
        "sweep-iou: {} images, {} thresholds, F1 {:.4} @ {:.2} -> {:.4} @ {:.2}",
        gts.len(),
        res.per_threshold.len(),
        first.f1,
        first.iou_threshold,
        last.f1,
        last.iou_threshold
    ))
}

fn cmd_synth(a: &SynthArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            toml::from_str::<SynthConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if a.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let samples = generate_synthetic(&cfg, a.count)?;
    save_dataset(&a.out_dir, &samples, Some(&cfg))?;
    let words: usize = samples.iter().map(|s| s.instances.len()).sum();
    ctx.say(&format!(
        "synth: {} images, {words} words -> {}",
        samples.len(),
        a.out_dir.display()
    ))
}

/// Raw target arrays of one image, row-major at output resolution.
#[derive(Debug, Serialize)]
pub struct TargetDump {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub contour: Vec<f64>,
    pub score: Vec<u8>,
    pub ignore: Vec<u8>,
    /// top, right, bottom, left.
    pub distances: [Vec<f64>; 4],
    pub angle: Vec<f64>,
}

impl TargetDump {
    fn new(t: &TargetMaps<f64>, stride: usize) -> Self {
        TargetDump {
            height: t.height(),
            width: t.width(),
            stride,
            contour: t.contour.data.clone(),
            score: t.score.data.clone(),
            ignore: t.ignore.data.clone(),
            distances: t.distances.clone().map(|g| g.data),
            angle: t.angle.data.clone(),
        }
    }
}

/// Targets of an image padded to the output stride.
fn targets_for(
    img: RgbImage,
    instances: Vec<Instance<f64>>,
    cfg: &TargetConfig,
) -> CliResult<(RgbImage, TargetMaps<f64>)> {
    let (padded, _) = pad_to_multiple(&img, cfg.stride);
    let sample = AnnotatedImage {
        image: padded,
        instances,
    };
    let t = build_targets(&sample, cfg)?;
    Ok((sample.image, t))
}

fn target_overlay(
    img: RgbImage,
    instances: &[Instance<f64>],
    t: &TargetMaps<f64>,
    stride: usize,
) -> RgbImage {
    let s = stride as u32;
    let mut c = Canvas::from_image(img);
    c.overlay_mask(&t.score, s, GREEN, 0.45);
    c.overlay_mask(&t.ignore, s, BLUE, 0.45);
    c.overlay_map(&t.contour, s, RED, 0.75);
    for inst in instances {
        c.quad(
            &inst.quad,
            1.0,
            if inst.dont_care { BLUE } else { GREEN },
            1,
        );
    }
    c.img
}

fn cmd_render_targets(a: &RenderArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?.targets,
        None => TargetConfig::default(),
    };
    let mut pairs = dataset_pairs(&a.data_dir)?;
    if let Some(n) = a.limit {
        pairs.truncate(n);
    }
    for (img_path, gt_path) in &pairs {
        let instances = read_icdar_gt::<f64>(gt_path)?;
        let (img, t) = targets_for(load_image(img_path)?, instances.clone(), &cfg)?;
        let name = stem(img_path);
        save_png(
            &heatmap(&t.contour, cfg.stride as u32),
            &a.out_dir.join(format!("{name}_contour.png")),
        )?;
        save_png(
            &target_overlay(img, &instances, &t, cfg.stride),
            &a.out_dir.join(format!("{name}_overlay.png")),
        )?;
        let json = serde_json::to_string(&TargetDump::new(&t, cfg.stride))
            .expect("target arrays serialize");
        write_file(&a.out_dir.join(format!("{name}_targets.json")), json)?;
    }
    ctx.say(&format!(
        "render-targets: {} images -> {}",
        pairs.len(),
        a.out_dir.display()
    ))
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str, kind: &str) -> CliResult<&'a PathBuf> {
    v.as_ref()
        .ok_or_else(|| CliError::Usage(format!("--kind {kind} requires --{flag}")))
}

fn cmd_plot(a: &PlotArgs, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let kind = a
        .kind
        .to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .to_string();
    let img = match a.kind {
        PlotKind::LossCurves => {
            let records = read_log(require(&a.log, "log", &kind)?)?;
            let series =
                |name: &str, f: &dyn Fn(&textcontour::losses::LossReport) -> Option<f64>| Series {
                    name: name.into(),
                    points: records
                        .iter()
                        .filter_map(|r| f(&r.report).map(|v| (r.step as f64, v)))
                        .collect(),
                };
            let mut all = vec![
                series("l_total", &|r| Some(r.l_total)),
                series("l_geo", &|r| Some(r.l_geo)),
                series("l_score", &|r| Some(r.l_score)),
            ];
            if records
                .first()
                .is_some_and(|r| r.report.l_contour.is_some())
            {
                all.push(series("l_contour", &|r| r.l_contour));
            }
            line_chart(
                &all,
                &ChartSpec {
                    title: "training losses",
                    x_label: "step",
                    y_label: "loss",
                    log_y: true,
                    y_range: None,
                },
            )
        }
        PlotKind::F1VsIou => {
            let p = require(&a.log, "log", &kind)?;
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            f1_chart(&parse_table(&text, &p.display().to_string())?)
        }
        PlotKind::TargetOverlay => {
            let image = load_image(require(&a.image, "image", &kind)?)?;
            let instances = read_icdar_gt::<f64>(require(&a.gt, "gt", &kind)?)?;
            let cfg = TargetConfig::default();
            let (img, t) = targets_for(image, instances.clone(), &cfg)?;
            target_overlay(img, &instances, &t, cfg.stride)
        }
        PlotKind::DetectionOverlay => {
            let mut c = Canvas::from_image(load_image(require(&a.image, "image", &kind)?)?);
            if let Some(gt) = &a.gt {
                for inst in read_icdar_gt::<f64>(gt)? {
                    c.quad(
                        &inst.quad,
                        1.0,
                        if inst.dont_care { BLUE } else { GREEN },
                        2,
                    );
                }
            }
            let p = require(&a.pred, "pred", &kind)?;
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            for d in parse_predictions::<f64>(&text, &p.display().to_string())? {
                c.quad(&d.quad, 1.0, RED, 2);
            }
            c.img
        }
    };
    save_png(&img, &a.out)?;
    ctx.say(&format!("plot: {kind} -> {}", a.out.display()))
}
