//! Training loop, run configuration, the training log and inference helpers.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::datasets::{augment, load_dataset, AugmentConfig, DatasetSpec, PAD_GRAY};
use crate::eval::{match_and_score, EvalResult};
use crate::geometry::Detection;
use crate::grid::Grid;
use crate::losses::{
    angle_loss, contour_loss, dense_iou_loss, dice_loss, total_loss, LossComponents, LossReport,
    LossWeights,
};
use crate::model::{
    build_model, images_to_tensor, BackboneConfig, ModelVariant, Network, NetworkOutputs,
    OUTPUT_STRIDE,
};
use crate::nn::{Adam, AdamConfig, Tensor};
use crate::postprocess::{detect, DecodeConfig, DenseMaps};
use crate::scalar::Scalar;
use crate::targets::{build_targets, AnnotatedImage, TargetConfig, TargetMaps};
use crate::{Error, Result};

/// One fixed-size training phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub input_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
}

/// Periodic evaluation on the training images, with optional early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    /// Evaluate every this many steps; 0 disables monitoring.
    pub eval_every: u64,
    pub iou_threshold: f64,
    /// Stop once training-set F1 reaches this value.
    pub stop_at_f1: Option<f64>,
    /// Never stop before this many steps.
    pub min_steps: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            eval_every: 0,
            iou_threshold: 0.5,
            stop_at_f1: None,
            min_steps: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: ModelVariant,
    pub backbone: BackboneConfig,
    pub weights: LossWeights,
    pub stages: Vec<StageConfig>,
    pub batch_size: usize,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub decode: DecodeConfig,
    pub targets: TargetConfig,
    /// Apply random scale/crop; otherwise images are only padded/cropped to the stage size.
    pub augment: bool,
    pub clip_norm: f64,
    pub adam: AdamConfig,
    /// Steps at the start during which only the contour loss produces gradients.
    pub contour_warmup_steps: u64,
    /// Detach the contour map where the detection path consumes it.
    pub stop_contour_grad: bool,
    pub checkpoint_every: u64,
    pub prefetch_workers: usize,
    pub output_dir: PathBuf,
    pub monitor: MonitorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: ModelVariant::Cascade2,
            backbone: BackboneConfig::default(),
            weights: LossWeights::default(),
            stages: vec![
                StageConfig {
                    input_size: 256,
                    steps: 2000,
                    learning_rate: 1e-3,
                },
                StageConfig {
                    input_size: 384,
                    steps: 1000,
                    learning_rate: 1e-4,
                },
            ],
            batch_size: 8,
            seed: 0,
            dataset: DatasetSpec::default(),
            decode: DecodeConfig::default(),
            targets: TargetConfig::default(),
            augment: true,
            clip_norm: 5.0,
            adam: AdamConfig::default(),
            contour_warmup_steps: 0,
            stop_contour_grad: false,
            checkpoint_every: 500,
            prefetch_workers: 1,
            output_dir: PathBuf::from("runs/default"),
            monitor: MonitorConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.weights.validate()?;
        self.decode.validate()?;
        AugmentConfig {
            crop_size: 32,
            ..self.dataset.augmentation.clone()
        }
        .validate()?;
        if self.stages.is_empty() {
            return Err(Error::Config(
                "at least one training stage is required".into(),
            ));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.steps == 0 {
                return Err(Error::Config(format!("stage {i}: steps must be > 0")));
            }
            if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
                return Err(Error::Config(format!(
                    "stage {i}: learning rate must be positive"
                )));
            }
            if s.input_size % 32 != 0 {
                return Err(Error::Config(format!(
                    "stage {i}: input size {} is not divisible by 32",
                    s.input_size
                )));
            }
            self.backbone.check_input_size(s.input_size, s.input_size)?;
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be > 0".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be > 0".into()));
        }
        if self.targets.stride != OUTPUT_STRIDE {
            return Err(Error::Config(format!(
                "target stride must equal the network output stride {OUTPUT_STRIDE}"
            )));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.stages.iter().map(|s| s.steps).sum()
    }

    /// Stage index of global step `step`, or the last stage past the end.
    pub fn stage_at(&self, step: u64) -> usize {
        let mut acc = 0;
        for (i, s) in self.stages.iter().enumerate() {
            acc += s.steps;
            if step < acc {
                return i;
            }
        }
        self.stages.len() - 1
    }
}

/// One training batch with its dense targets.
pub struct Batch<F> {
    pub step: u64,
    pub indices: Vec<usize>,
    pub images: Tensor<F>,
    pub targets: Vec<TargetMaps<f64>>,
    /// Digest of the sample indices and pixel content.
    pub hash: String,
}

/// Sample index used at global position `pos` (= step * batch + slot); every
/// epoch is a fresh seeded permutation.
pub fn sample_index(seed: u64, pos: u64, n: usize) -> usize {
    let epoch = pos / n as u64;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e90_c4a1_5eed);
    rng.set_stream(epoch);
    perm.shuffle(&mut rng);
    perm[(pos % n as u64) as usize]
}

/// Deterministic batch of global step `step`: depends only on the config, the samples and `step`.
pub fn make_batch<F: Scalar>(
    cfg: &RunConfig,
    samples: &[AnnotatedImage<f64>],
    step: u64,
) -> Result<Batch<F>> {
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let size = cfg.stages[cfg.stage_at(step)].input_size;
    let aug = if cfg.augment {
        AugmentConfig {
            crop_size: size,
            ..cfg.dataset.augmentation.clone()
        }
    } else {
        AugmentConfig {
            crop_size: size,
            ..AugmentConfig::identity(size)
        }
    };
    let mut hasher = Sha256::new();
    let mut images = Vec::with_capacity(cfg.batch_size);
    let mut targets = Vec::with_capacity(cfg.batch_size);
    let mut indices = Vec::with_capacity(cfg.batch_size);
    for k in 0..cfg.batch_size as u64 {
        let pos = step * cfg.batch_size as u64 + k;
        let idx = sample_index(cfg.seed, pos, samples.len());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa06e_a06e);
        rng.set_stream(pos);
        let s = augment(&samples[idx], &aug, &mut rng);
        targets.push(build_targets(&s, &cfg.targets)?);
        hasher.update((idx as u64).to_le_bytes());
        hasher.update(s.image.as_raw());
        indices.push(idx);
        images.push(s.image);
    }
    let refs: Vec<&RgbImage> = images.iter().collect();
    let images = images_to_tensor(&refs, cfg.backbone.pixel_mean)?;
    let hash = hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(Batch {
        step,
        indices,
        images,
        targets,
        hash,
    })
}

/// Loss report plus gradients with respect to the activated outputs.
pub struct StepLoss<F> {
    pub report: LossReport,
    pub d_score: Tensor<F>,
    pub d_distances: Tensor<F>,
    pub d_angle: Tensor<F>,
    pub d_contour: Option<Tensor<F>>,
}

/// Evaluates every loss term on a batch. With `contour_only`, detection
/// gradients are zeroed (the report still carries every term).
pub fn batch_loss<F: Scalar>(
    out: &NetworkOutputs<F>,
    targets: &[TargetMaps<f64>],
    w: &LossWeights,
    with_contour: bool,
    contour_only: bool,
) -> Result<StepLoss<F>> {
    let [n, _, h, wd] = out.score.shape;
    if targets.len() != n || targets.iter().any(|t| (t.height(), t.width()) != (h, wd)) {
        return Err(Error::Data(
            "target maps do not match the network output".into(),
        ));
    }
    let flat =
        |f: &dyn Fn(&TargetMaps<f64>) -> Vec<F>| -> Vec<F> { targets.iter().flat_map(f).collect() };
    let u8f = |m: &Grid<u8>| m.data.iter().map(|&v| F::lit(v as f64)).collect::<Vec<F>>();
    let gt_score = flat(&|t| u8f(&t.score));
    let train_mask = flat(&|t| {
        t.ignore
            .data
            .iter()
            .map(|&v| F::lit(1.0 - v as f64))
            .collect()
    });
    let gt_angle = flat(&|t| t.angle.data.iter().map(|&v| F::lit(v)).collect());
    let gt_d: [Vec<F>; 4] = std::array::from_fn(|c| {
        flat(&|t| t.distances[c].data.iter().map(|&v| F::lit(v)).collect())
    });
    let channel = |t: &Tensor<F>, c: usize| -> Vec<F> {
        (0..n).flat_map(|i| t.plane(i, c).to_vec()).collect()
    };
    let pred_d: [Vec<F>; 4] = std::array::from_fn(|c| channel(&out.distances, c));
    let eps = F::lit(w.epsilon);

    let score = dice_loss(&out.score.data, &gt_score, &train_mask, eps);
    let geo = dense_iou_loss(
        [&pred_d[0], &pred_d[1], &pred_d[2], &pred_d[3]],
        [&gt_d[0], &gt_d[1], &gt_d[2], &gt_d[3]],
        &gt_score,
        eps,
    );
    let angle = angle_loss(&out.angle.data, &gt_angle, &gt_score);
    let contour = match (&out.contour, with_contour) {
        (Some(c), true) => {
            let gt_c = flat(&|t| t.contour.data.iter().map(|&v| F::lit(v)).collect());
            Some(contour_loss(&c.data, &gt_c, &train_mask))
        }
        _ => None,
    };
    let comps = LossComponents {
        l_score: score.value.as_f64(),
        l_iou: geo.value.as_f64(),
        l_theta: angle.value.as_f64(),
        l_contour: contour.as_ref().map_or(0.0, |c| c.value.as_f64()),
    };
    let mut report = total_loss(&comps, w, contour.is_some())?;
    report.empty_terms =
        score.empty || geo.empty || angle.empty || contour.as_ref().is_some_and(|c| c.empty);

    let det_scale = if contour_only && contour.is_some() {
        0.0
    } else {
        1.0
    };
    let scaled = |g: &[F], k: f64| -> Vec<F> {
        let k = F::lit(k);
        g.iter().map(|&v| v * k).collect()
    };
    let d_score = Tensor::from_vec(
        out.score.shape,
        scaled(&score.grad, w.lambda_cls * det_scale),
    );
    let d_angle = Tensor::from_vec(out.angle.shape, scaled(&angle.grad, det_scale));
    let mut d_distances = Tensor::zeros(out.distances.shape);
    let plane = h * wd;
    let k = F::lit(w.lambda_iou * det_scale);
    for i in 0..n {
        for c in 0..4 {
            let src = &geo.grad[c][i * plane..(i + 1) * plane];
            d_distances
                .plane_mut(i, c)
                .iter_mut()
                .zip(src)
                .for_each(|(d, &g)| *d = g * k);
        }
    }
    let d_contour =
        contour.map(|c| Tensor::from_vec([n, 1, h, wd], scaled(&c.grad, w.beta_contour)));
    Ok(StepLoss {
        report,
        d_score,
        d_distances,
        d_angle,
        d_contour,
    })
}

/// One logged optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub stage: usize,
    pub input_size: usize,
    pub learning_rate: f64,
    pub report: LossReport,
    pub grad_norm: f64,
    pub batch_hash: String,
}

pub const LOG_FILE: &str = "train_log.csv";

pub fn log_header(with_contour: bool) -> String {
    let contour = if with_contour { "l_contour," } else { "" };
    format!("step,stage,input_size,learning_rate,l_score,l_iou,l_theta,l_geo,{contour}l_total,grad_norm,empty_terms,batch_hash")
}

pub fn format_log_line(r: &StepRecord) -> String {
    let p = &r.report;
    let contour = p.l_contour.map(|c| format!("{c:e},")).unwrap_or_default();
    format!(
        "{},{},{},{:e},{:e},{:e},{:e},{:e},{contour}{:e},{:e},{},{}",
        r.step,
        r.stage,
        r.input_size,
        r.learning_rate,
        p.l_score,
        p.l_iou,
        p.l_theta,
        p.l_geo,
        p.l_total,
        r.grad_norm,
        u8::from(p.empty_terms),
        r.batch_hash
    )
}

/// Parses a training log written by [`train`].
pub fn parse_log(text: &str, path: &str) -> Result<Vec<StepRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let err = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        line,
        msg,
    };
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty log".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let with_contour = cols.contains(&"l_contour");
    if header != log_header(with_contour) {
        return Err(err(1, format!("unexpected header `{header}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(err(
                i + 1,
                format!("expected {} fields, found {}", cols.len(), f.len()),
            ));
        }
        let num = |k: usize| {
            f[k].parse::<f64>()
                .map_err(|e| err(i + 1, format!("column {}: {e}", cols[k])))
        };
        let int = |k: usize| {
            f[k].parse::<u64>()
                .map_err(|e| err(i + 1, format!("column {}: {e}", cols[k])))
        };
        let o = usize::from(with_contour);
        out.push(StepRecord {
            step: int(0)?,
            stage: int(1)? as usize,
            input_size: int(2)? as usize,
            learning_rate: num(3)?,
            report: LossReport {
                l_score: num(4)?,
                l_iou: num(5)?,
                l_theta: num(6)?,
                l_geo: num(7)?,
                l_contour: if with_contour { Some(num(8)?) } else { None },
                l_total: num(8 + o)?,
                empty_terms: int(10 + o)? != 0,
            },
            grad_norm: num(9 + o)?,
            batch_hash: f[11 + o].to_string(),
        });
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_log(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Stop after this global step count even if the schedule is longer.
    pub max_steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Global step count reached.
    pub steps: u64,
    pub records: Vec<StepRecord>,
    /// `(steps completed, F1)` of every monitoring evaluation.
    pub evaluations: Vec<(u64, f64)>,
    pub stopped_early: bool,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub seconds: f64,
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Trains on the dataset named by the config.
pub fn train<F: Scalar>(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = load_dataset::<f64>(&cfg.dataset)?;
    log::info!(
        "loaded {} training samples from {}",
        samples.len(),
        cfg.dataset.root.display()
    );
    train_on_samples::<F>(cfg, &samples, opts)
}

/// Trains on in-memory samples; writes the log and checkpoints under `cfg.output_dir`.
pub fn train_on_samples<F: Scalar>(
    cfg: &RunConfig,
    samples: &[AnnotatedImage<f64>],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let started = Instant::now();
    let out_dir = &cfg.output_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (mut net, mut opt, start) = match &opts.resume {
        Some(path) => {
            let ck = load_checkpoint::<F>(path)?;
            if ck.header.config.variant != cfg.variant || ck.header.config.backbone != cfg.backbone
            {
                return Err(Error::Checkpoint(format!(
                    "{}: variant/backbone differ from the run config",
                    path.display()
                )));
            }
            let opt = ck
                .optimizer
                .unwrap_or_else(|| Adam::new(&ck.network.params, cfg.adam));
            (ck.network, opt, ck.header.step)
        }
        None => {
            let mut net = build_model::<F>(cfg.variant, &cfg.backbone, cfg.seed)?;
            net.stop_contour_grad = cfg.stop_contour_grad;
            let opt = Adam::new(&net.params, cfg.adam);
            (net, opt, 0)
        }
    };
    let end = opts
        .max_steps
        .map_or(cfg.total_steps(), |m| m.min(cfg.total_steps()));
    let with_contour = cfg.variant.has_contour();
    let log_path = out_dir.join(LOG_FILE);
    let fresh_log = opts.resume.is_none() || !log_path.exists();
    let mut log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh_log)
        .truncate(fresh_log)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if fresh_log {
        writeln!(log_file, "{}", log_header(with_contour)).map_err(|e| Error::io(&log_path, e))?;
    }
    let last_path = out_dir.join(LAST_CHECKPOINT);
    let mut records = Vec::new();
    let mut evaluations = Vec::new();
    let mut stopped_early = false;
    let workers = cfg.prefetch_workers.max(1) as u64;

    let result: Result<u64> = std::thread::scope(|scope| {
        let mut receivers = Vec::new();
        for wk in 0..workers {
            let (tx, rx) = sync_channel::<Result<Batch<F>>>(2);
            receivers.push(rx);
            scope.spawn(move || {
                let mut s = start + wk;
                while s < end {
                    if tx.send(make_batch::<F>(cfg, samples, s)).is_err() {
                        break;
                    }
                    s += workers;
                }
            });
        }
        let mut done = start;
        for step in start..end {
            let batch = receivers[((step - start) % workers) as usize]
                .recv()
                .map_err(|_| Error::Data("batch worker stopped unexpectedly".into()))??;
            let stage = cfg.stage_at(step);
            let lr = cfg.stages[stage].learning_rate;
            let pass = net.forward_graph(batch.images)?;
            let out = pass.outputs();
            let contour_only = step < cfg.contour_warmup_steps;
            let loss = match batch_loss(
                &out,
                &batch.targets,
                &cfg.weights,
                with_contour,
                contour_only,
            ) {
                Ok(l) => l,
                Err(e) => {
                    drop(pass);
                    save_checkpoint(&last_path, cfg, step, &net, Some(&opt))?;
                    log::error!(
                        "step {step}: {e}; last good weights kept in {}",
                        last_path.display()
                    );
                    return Err(e);
                }
            };
            let mut grads =
                pass.backward(loss.d_score, loss.d_distances, loss.d_angle, loss.d_contour);
            drop(pass);
            if !grads.is_finite() {
                save_checkpoint(&last_path, cfg, step, &net, Some(&opt))?;
                return Err(Error::NonFinite {
                    what: format!("gradient at step {step}"),
                });
            }
            let norm = grads.clip_global_norm(F::lit(cfg.clip_norm)).as_f64();
            opt.step(&mut net.params, &grads, lr);
            let rec = StepRecord {
                step,
                stage,
                input_size: cfg.stages[stage].input_size,
                learning_rate: lr,
                report: loss.report,
                grad_norm: norm,
                batch_hash: batch.hash,
            };
            writeln!(log_file, "{}", format_log_line(&rec)).map_err(|e| Error::io(&log_path, e))?;
            records.push(rec);
            done = step + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                save_checkpoint(&last_path, cfg, done, &net, Some(&opt))?;
            }
            let m = &cfg.monitor;
            if m.eval_every > 0 && (done % m.eval_every == 0 || done == end) {
                let snapshot = net.clone();
                let size = cfg.stages[stage].input_size;
                let res =
                    evaluate_on_samples(&snapshot, samples, size, &cfg.decode, m.iou_threshold)?;
                log::info!("step {done}: train F1@{} = {:.4}", m.iou_threshold, res.f1);
                evaluations.push((done, res.f1));
                if m.stop_at_f1.is_some_and(|t| res.f1 >= t) && done >= m.min_steps {
                    stopped_early = true;
                    break;
                }
            }
        }
        drop(receivers);
        Ok(done)
    });
    let steps = result?;
    log_file.flush().map_err(|e| Error::io(&log_path, e))?;
    let final_path = out_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_path, cfg, steps, &net, Some(&opt))?;
    save_checkpoint(&last_path, cfg, steps, &net, Some(&opt))?;
    Ok(TrainOutcome {
        steps,
        records,
        evaluations,
        stopped_early,
        checkpoint: final_path,
        log: log_path,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Padding applied before inference; detections are already in original image coordinates
/// because padding is added only on the right and bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadTransform {
    pub width: u32,
    pub height: u32,
    pub padded_width: u32,
    pub padded_height: u32,
}

/// Pads an image with mid-gray on the right/bottom to a multiple of `m`.
pub fn pad_to_multiple(img: &RgbImage, m: usize) -> (RgbImage, PadTransform) {
    let (w, h) = img.dimensions();
    let up = |v: u32| v.div_ceil(m as u32).max(1) * m as u32;
    let (pw, ph) = (up(w), up(h));
    let t = PadTransform {
        width: w,
        height: h,
        padded_width: pw,
        padded_height: ph,
    };
    if (pw, ph) == (w, h) {
        return (img.clone(), t);
    }
    let mut out = RgbImage::from_pixel(pw, ph, Rgb([PAD_GRAY; 3]));
    imageops_overlay(&mut out, img);
    (out, t)
}

fn imageops_overlay(dst: &mut RgbImage, src: &RgbImage) {
    for (x, y, p) in src.enumerate_pixels() {
        dst.put_pixel(x, y, *p);
    }
}

/// Inference result of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub detections: Vec<Detection<f64>>,
    /// Contour map at output resolution, cropped to the unpadded image area.
    pub contour: Option<Grid<f64>>,
    pub transform: PadTransform,
}

/// Runs the network on one image and decodes its detections.
pub fn predict_image<F: Scalar>(
    net: &Network<F>,
    img: &RgbImage,
    decode: &DecodeConfig,
) -> Result<Prediction> {
    let (padded, transform) = pad_to_multiple(img, net.backbone.size_multiple());
    if (padded.width(), padded.height()) != img.dimensions() {
        log::debug!(
            "padded {}x{} to {}x{}",
            img.width(),
            img.height(),
            padded.width(),
            padded.height()
        );
    }
    let x = images_to_tensor::<F>(&[&padded], net.backbone.pixel_mean)?;
    let out = net.forward(x)?;
    let dets = detect(DenseMaps::from_outputs(&out, 0), OUTPUT_STRIDE, decode);
    let detections = dets
        .into_iter()
        .map(|d| Detection {
            quad: d.quad.cast(),
            score: d.score.as_f64(),
        })
        .collect();
    let contour = out.contour.as_ref().map(|c| {
        let (ow, oh) = (c.w(), c.h());
        let (w, h) = (
            (transform.width as usize).div_ceil(OUTPUT_STRIDE),
            (transform.height as usize).div_ceil(OUTPUT_STRIDE),
        );
        let mut g = Grid::new(h.min(oh), w.min(ow));
        for y in 0..g.h {
            for x in 0..g.w {
                g.set(y, x, c.plane(0, 0)[y * ow + x].as_f64());
            }
        }
        g
    });
    Ok(Prediction {
        detections,
        contour,
        transform,
    })
}

/// Evaluates a network on annotated samples, each fitted to `size` without scaling.
pub fn evaluate_on_samples<F: Scalar>(
    net: &Network<F>,
    samples: &[AnnotatedImage<f64>],
    size: usize,
    decode: &DecodeConfig,
    iou_threshold: f64,
) -> Result<EvalResult> {
    let fit = AugmentConfig::identity(size);
    let mut dets = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    for s in samples {
        // identity scale: the crop RNG is only consulted for images larger than `size`
        let s = augment(s, &fit, &mut ChaCha8Rng::seed_from_u64(0));
        dets.push(predict_image(net, &s.image, decode)?.detections);
        gts.push(s.instances);
    }
    match_and_score(&dets, &gts, iou_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic, SynthConfig};

    fn tiny_cfg(dir: &Path, variant: ModelVariant) -> RunConfig {
        RunConfig {
            variant,
            backbone: BackboneConfig {
                stage_channels: vec![4, 4, 8, 8, 8],
                decoder_channels: vec![8, 4, 4],
                input_size: 64,
                ..Default::default()
            },
            stages: vec![
                StageConfig {
                    input_size: 64,
                    steps: 4,
                    learning_rate: 1e-3,
                },
                StageConfig {
                    input_size: 96,
                    steps: 2,
                    learning_rate: 1e-4,
                },
            ],
            batch_size: 2,
            augment: true,
            dataset: DatasetSpec {
                augmentation: AugmentConfig {
                    scale_range: [0.8, 1.2],
                    crop_size: 64,
                    ..Default::default()
                },
                ..Default::default()
            },
            output_dir: dir.to_path_buf(),
            checkpoint_every: 3,
            ..Default::default()
        }
    }

    fn synth() -> Vec<AnnotatedImage<f64>> {
        let cfg = SynthConfig {
            canvas: 64,
            font_scale_range: [10.0, 14.0],
            words_per_image: [1, 2],
            seed: 3,
            ..Default::default()
        };
        generate_synthetic(&cfg, 3).unwrap()
    }

    #[test]
    fn config_toml_roundtrip_and_validation() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = RunConfig::from_toml("variant = \"aux1\"\nbatch_size = 2\n").unwrap();
        assert_eq!(partial.variant, ModelVariant::Aux1);
        assert_eq!(partial.stages, cfg.stages);
        let bad = "[[stages]]\ninput_size = 250\nsteps = 1\nlearning_rate = 0.001\n";
        assert!(RunConfig::from_toml(bad).is_err());
        assert!(RunConfig::from_toml("bogus_key = 3\nvariant = \"nope\"").is_err());
    }

    #[test]
    fn stage_lookup() {
        let cfg = tiny_cfg(Path::new("."), ModelVariant::Baseline);
        assert_eq!(
            (
                cfg.stage_at(0),
                cfg.stage_at(3),
                cfg.stage_at(4),
                cfg.stage_at(99)
            ),
            (0, 0, 1, 1)
        );
    }

    #[test]
    fn batches_are_deterministic_and_cover_epochs() {
        let cfg = tiny_cfg(Path::new("."), ModelVariant::Baseline);
        let s = synth();
        let a = make_batch::<f32>(&cfg, &s, 5).unwrap();
        let b = make_batch::<f32>(&cfg, &s, 5).unwrap();
        assert_eq!(a.hash, b.hash);
        assert_eq!(a.images, b.images);
        assert_eq!(a.images.shape, [2, 3, 96, 96]);
        let mut seen: Vec<usize> = (0..3).map(|p| sample_index(cfg.seed, p, 3)).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn training_log_contract_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let s = synth();
        let cfg = tiny_cfg(dir.path(), ModelVariant::Aux2);
        let full = train_on_samples::<f64>(&cfg, &s, &TrainOptions::default()).unwrap();
        assert_eq!(full.steps, 6);
        let log = read_log(&full.log).unwrap();
        assert_eq!(log.len(), 6);
        assert!(log
            .iter()
            .all(|r| r.report.l_total.is_finite() && r.report.is_consistent(&cfg.weights, 1e-9)));
        assert_eq!(log, full.records);

        let dir2 = tempfile::tempdir().unwrap();
        let cfg2 = RunConfig {
            output_dir: dir2.path().to_path_buf(),
            ..cfg.clone()
        };
        let part = train_on_samples::<f64>(
            &cfg2,
            &s,
            &TrainOptions {
                max_steps: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(part.steps, 3);
        let resumed = train_on_samples::<f64>(
            &cfg2,
            &s,
            &TrainOptions {
                resume: Some(part.checkpoint.clone()),
                max_steps: None,
            },
        )
        .unwrap();
        assert_eq!(resumed.records.first().unwrap().step, 3);
        for (a, b) in resumed.records.iter().zip(&full.records[3..]) {
            assert_eq!(a.batch_hash, b.batch_hash);
            assert!(
                (a.report.l_total - b.report.l_total).abs()
                    <= 1e-9 * b.report.l_total.abs().max(1.0)
            );
        }
        assert_eq!(read_log(&resumed.log).unwrap().len(), 6);
    }

    #[test]
    fn baseline_log_has_no_contour_column() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            stages: vec![StageConfig {
                input_size: 64,
                steps: 2,
                learning_rate: 1e-3,
            }],
            ..tiny_cfg(dir.path(), ModelVariant::Baseline)
        };
        let out = train_on_samples::<f32>(&cfg, &synth(), &TrainOptions::default()).unwrap();
        let text = fs::read_to_string(&out.log).unwrap();
        assert!(!text.lines().next().unwrap().contains("l_contour"));
        assert!(read_log(&out.log)
            .unwrap()
            .iter()
            .all(|r| r.report.l_contour.is_none()));
    }

    #[test]
    fn untrained_prediction_is_valid() {
        let net = build_model::<f32>(
            ModelVariant::Cascade1,
            &tiny_cfg(Path::new("."), ModelVariant::Cascade1).backbone,
            0,
        )
        .unwrap();
        let img = RgbImage::from_pixel(70, 50, Rgb([200, 10, 10]));
        let p = predict_image(&net, &img, &DecodeConfig::default()).unwrap();
        assert_eq!(
            (p.transform.padded_width, p.transform.padded_height),
            (96, 64)
        );
        assert_eq!(p.contour.as_ref().map(|c| (c.h, c.w)), Some((13, 18)));
        assert!(p
            .detections
            .iter()
            .all(|d| d.quad.area() > 0.0 && (0.0..=1.0).contains(&d.score)));
    }
}
