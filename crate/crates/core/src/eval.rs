//! Detection evaluation: greedy IoU matching, precision/recall/F1 and threshold sweeps.
//!
//! Protocol, per image: detections are visited by descending score (equal
//! scores keep input order). Each one claims the not-yet-claimed ground truth
//! with the highest IoU (ties: lower index) among those reaching the
//! threshold. Claiming a trainable ground truth is a true positive; claiming a
//! don't-care region consumes it and discards the detection; claiming nothing
//! is a false positive. Recall is measured against trainable ground truth.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::{quad_iou, Detection};
use crate::losses::LossReport;
use crate::model::ModelVariant;
use crate::scalar::Scalar;
use crate::targets::{AnnotatedImage, Instance};
use crate::training::{evaluate_on_samples, train_on_samples, RunConfig, TrainOptions};
use crate::{Error, Result};

/// `0.50, 0.55, …, 0.90`.
pub fn default_thresholds() -> Vec<f64> {
    (10..=18).map(|k| k as f64 * 0.05).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    /// Detections that landed on don't-care regions.
    pub discarded: usize,
    /// Trainable ground-truth instances.
    pub num_gt: usize,
}

impl MatchCounts {
    pub fn add(&mut self, o: &MatchCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.discarded += o.discarded;
        self.num_gt += o.num_gt;
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.num_gt == 0 {
            0.0
        } else {
            self.tp as f64 / self.num_gt as f64
        }
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Outcome of matching one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageMatch {
    pub counts: MatchCounts,
    /// `(detection index, ground-truth index)` of true positives.
    pub pairs: Vec<(usize, usize)>,
}

/// Greedy one-to-one matching of one image; see the module docs for the rule.
pub fn match_image<F: Scalar>(
    dets: &[Detection<F>],
    gts: &[Instance<F>],
    iou_threshold: f64,
) -> ImageMatch {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let thr = F::lit(iou_threshold);
    let mut claimed = vec![false; gts.len()];
    let mut out = ImageMatch {
        counts: MatchCounts {
            num_gt: gts.iter().filter(|g| !g.dont_care).count(),
            ..Default::default()
        },
        pairs: Vec::new(),
    };
    for d in order {
        let mut best: Option<(usize, F)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] {
                continue;
            }
            let iou = quad_iou(&dets[d].quad, &gt.quad);
            if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, _)) => {
                claimed[g] = true;
                if gts[g].dont_care {
                    out.counts.discarded += 1;
                } else {
                    out.counts.tp += 1;
                    out.pairs.push((d, g));
                }
            }
            None => out.counts.fp += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub iou_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Headline values, at the first evaluated threshold.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: MatchCounts,
    pub per_threshold: Vec<ThresholdRow>,
}

fn count_all<F: Scalar>(
    dets: &[Vec<Detection<F>>],
    gts: &[Vec<Instance<F>>],
    thr: f64,
) -> Result<MatchCounts> {
    if dets.len() != gts.len() {
        return Err(Error::Data(format!(
            "{} detection lists for {} ground-truth images",
            dets.len(),
            gts.len()
        )));
    }
    let mut total = MatchCounts::default();
    for (d, g) in dets.iter().zip(gts) {
        total.add(&match_image(d, g, thr).counts);
    }
    Ok(total)
}

/// Precision, recall and F1 over a set of images at one IoU threshold.
pub fn match_and_score<F: Scalar>(
    dets: &[Vec<Detection<F>>],
    gts: &[Vec<Instance<F>>],
    iou_threshold: f64,
) -> Result<EvalResult> {
    sweep_iou(dets, gts, &[iou_threshold])
}

/// One full matching pass per threshold.
pub fn sweep_iou<F: Scalar>(
    dets: &[Vec<Detection<F>>],
    gts: &[Vec<Instance<F>>],
    thresholds: &[f64],
) -> Result<EvalResult> {
    if thresholds.is_empty() {
        return Err(Error::Config(
            "at least one IoU threshold is required".into(),
        ));
    }
    if thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0))
        || thresholds.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::Config(format!(
            "thresholds must be ascending in (0, 1]: {thresholds:?}"
        )));
    }
    let mut rows = Vec::with_capacity(thresholds.len());
    let mut first = None;
    for &t in thresholds {
        let c = count_all(dets, gts, t)?;
        rows.push(ThresholdRow {
            iou_threshold: t,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        });
        first.get_or_insert(c);
    }
    let c = first.expect("non-empty thresholds");
    Ok(EvalResult {
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        counts: c,
        per_threshold: rows,
    })
}

pub const TABLE_HEADER: &str = "iou_threshold,precision,recall,f1";

/// Comma-separated table with a header line.
pub fn format_table(rows: &[ThresholdRow]) -> String {
    let mut s = format!("{TABLE_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{:.2},{:.6},{:.6},{:.6}\n",
            r.iou_threshold, r.precision, r.recall, r.f1
        ));
    }
    s
}

pub fn parse_table(text: &str, path: &str) -> Result<Vec<ThresholdRow>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == TABLE_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                msg: format!("expected header `{TABLE_HEADER}`"),
            })
        }
    }
    lines
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if v.len() != 4 {
                return Err(Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    msg: "expected 4 columns".into(),
                });
            }
            Ok(ThresholdRow {
                iou_threshold: v[0],
                precision: v[1],
                recall: v[2],
                f1: v[3],
            })
        })
        .collect()
}

/// Human-readable summary table.
pub fn format_summary(res: &EvalResult) -> String {
    let mut s = String::from("  IoU      P      R     F1\n");
    for r in &res.per_threshold {
        s.push_str(&format!(
            "{:>5.2} {:>6.3} {:>6.3} {:>6.3}\n",
            r.iou_threshold, r.precision, r.recall, r.f1
        ));
    }
    s
}

/// Training-set fit of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityEntry {
    pub variant: ModelVariant,
    /// `None` when training diverged.
    pub result: Option<EvalResult>,
    pub final_loss: Option<LossReport>,
    pub steps: u64,
    pub seconds: f64,
    pub error: Option<String>,
}

/// Trains every variant with the same schedule and seed on `train_set` and
/// evaluates each on that same set. Run artifacts go to
/// `base.output_dir/<variant>`. A diverging variant is reported, not fatal.
pub fn capacity_study(
    base: &RunConfig,
    variants: &[ModelVariant],
    train_set: &[AnnotatedImage<f64>],
    iou_threshold: f64,
) -> Result<Vec<CapacityEntry>> {
    let mut out = Vec::with_capacity(variants.len());
    for &variant in variants {
        let cfg = RunConfig {
            variant,
            output_dir: base.output_dir.join(variant.name()),
            ..base.clone()
        };
        let eval_size = cfg
            .stages
            .last()
            .map_or(cfg.backbone.input_size, |s| s.input_size);
        let entry = match train_on_samples::<f32>(&cfg, train_set, &TrainOptions::default()) {
            Ok(run) => {
                let ck = crate::checkpoint::load_checkpoint::<f32>(&run.checkpoint)?;
                let result = evaluate_on_samples(
                    &ck.network,
                    train_set,
                    eval_size,
                    &cfg.decode,
                    iou_threshold,
                )?;
                CapacityEntry {
                    variant,
                    result: Some(result),
                    final_loss: run.records.last().map(|r| r.report),
                    steps: run.steps,
                    seconds: run.seconds,
                    error: None,
                }
            }
            Err(e @ Error::NonFinite { .. }) => {
                log::warn!("{variant}: training diverged: {e}");
                CapacityEntry {
                    variant,
                    result: None,
                    final_loss: None,
                    steps: 0,
                    seconds: 0.0,
                    error: Some(e.to_string()),
                }
            }
            Err(e) => return Err(e),
        };
        out.push(entry);
    }
    Ok(out)
}
