//! Dense outputs to scored quadrilaterals: per-pixel box reconstruction,
//! thresholding and non-maximum suppression.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::{quad_iou, Detection, Point, QuadBox, RotatedBox};
use crate::model::NetworkOutputs;
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    #[default]
    Standard,
    LocalityAware,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
    pub merge_mode: MergeMode,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            score_threshold: 0.8,
            nms_iou: 0.2,
            max_detections: 1000,
            merge_mode: MergeMode::Standard,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("nms_iou", self.nms_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Borrowed single-image output maps, row-major `h x w`.
#[derive(Debug, Clone, Copy)]
pub struct DenseMaps<'a, F> {
    pub h: usize,
    pub w: usize,
    pub score: &'a [F],
    /// top, right, bottom, left in output pixels.
    pub distances: [&'a [F]; 4],
    pub angle: &'a [F],
}

impl<'a, F: Scalar> DenseMaps<'a, F> {
    /// Maps of image `n` of a network output batch.
    pub fn from_outputs(out: &'a NetworkOutputs<F>, n: usize) -> Self {
        DenseMaps {
            h: out.score.h(),
            w: out.score.w(),
            score: out.score.plane(n, 0),
            distances: std::array::from_fn(|c| out.distances.plane(n, c)),
            angle: out.angle.plane(n, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded<F> {
    /// In row-major pixel order.
    pub detections: Vec<Detection<F>>,
    /// Above-threshold pixels whose geometry could not form a valid box.
    pub skipped: usize,
}

/// Rotated box encoded at output pixel `(x, y)`, in input pixels.
pub fn decode_pixel<F: Scalar>(
    x: usize,
    y: usize,
    d: [F; 4],
    theta: F,
    stride: usize,
) -> Option<RotatedBox<F>> {
    let s = F::from_usize_lossy(stride);
    let half = F::lit(0.5);
    let p = Point::new(
        (F::from_usize_lossy(x) + half) * s,
        (F::from_usize_lossy(y) + half) * s,
    );
    let [t, r, b, l] = d.map(|v| v * s);
    if ![t, r, b, l, theta].iter().all(|v| v.is_finite()) {
        return None;
    }
    let (width, height) = (l + r, t + b);
    if !(width > F::zero() && height > F::zero()) {
        return None;
    }
    let (sn, cs) = theta.sin_cos();
    let (u, v) = (Point::new(cs, -sn), Point::new(sn, cs));
    let center = p + u * ((r - l) * half) + v * ((b - t) * half);
    Some(RotatedBox {
        cx: center.x,
        cy: center.y,
        width,
        height,
        theta,
    })
}

/// One detection per pixel whose score reaches the threshold.
pub fn decode_rbox<F: Scalar>(
    maps: DenseMaps<'_, F>,
    stride: usize,
    cfg: &DecodeConfig,
) -> Decoded<F> {
    let thr = F::lit(cfg.score_threshold);
    let mut detections = Vec::new();
    let mut skipped = 0;
    for y in 0..maps.h {
        for x in 0..maps.w {
            let i = y * maps.w + x;
            let s = maps.score[i];
            if !(s >= thr) {
                continue;
            }
            let d = [
                maps.distances[0][i],
                maps.distances[1][i],
                maps.distances[2][i],
                maps.distances[3][i],
            ];
            match decode_pixel(x, y, d, maps.angle[i], stride)
                .and_then(|r| QuadBox::new(r.corners()).ok())
            {
                Some(q) => detections.push(Detection::new(q, s)),
                None => skipped += 1,
            }
        }
    }
    if skipped > 0 {
        log::warn!("decode: skipped {skipped} pixels with non-finite or degenerate geometry");
    }
    Decoded {
        detections,
        skipped,
    }
}

/// Indices sorted by descending score; equal scores keep input order.
fn score_order<F: Scalar>(dets: &[Detection<F>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Greedy suppression: keep the best remaining box, drop everything with IoU above the threshold.
pub fn standard_nms<F: Scalar>(
    dets: &[Detection<F>],
    iou_threshold: f64,
    max_detections: usize,
) -> Vec<Detection<F>> {
    let thr = F::lit(iou_threshold);
    let mut kept: Vec<Detection<F>> = Vec::new();
    for i in score_order(dets) {
        if kept.len() >= max_detections {
            break;
        }
        if kept
            .iter()
            .all(|k| !(quad_iou(&k.quad, &dets[i].quad) > thr))
        {
            kept.push(dets[i].clone());
        }
    }
    kept
}

/// Rotates `b`'s vertex list to best align with `a`'s, so corners can be averaged.
fn aligned_vertices<F: Scalar>(a: &QuadBox<F>, b: &QuadBox<F>) -> [Point<F>; 4] {
    let (va, vb) = (a.vertices(), b.vertices());
    let cost = |k: usize| -> F { (0..4).map(|i| (va[i] - vb[(i + k) % 4]).norm()).sum() };
    let best = (0..4)
        .min_by(|&x, &y| cost(x).partial_cmp(&cost(y)).unwrap_or(Ordering::Equal))
        .unwrap_or(0);
    std::array::from_fn(|i| vb[(i + best) % 4])
}

struct Merged<F> {
    /// Score-weighted vertex sums.
    acc: [Point<F>; 4],
    weight: F,
    quad: QuadBox<F>,
    score: F,
}

impl<F: Scalar> Merged<F> {
    fn start(d: &Detection<F>) -> Self {
        let w = d.score.max(F::epsilon());
        Merged {
            acc: d.quad.vertices().map(|p| p * w),
            weight: w,
            quad: d.quad.clone(),
            score: d.score,
        }
    }

    fn absorb(&mut self, d: &Detection<F>) {
        let w = d.score.max(F::epsilon());
        let vb = aligned_vertices(&self.quad, &d.quad);
        let mut acc = self.acc;
        for (a, p) in acc.iter_mut().zip(vb) {
            *a = *a + p * w;
        }
        let weight = self.weight + w;
        let inv = F::one() / weight;
        match QuadBox::new(acc.map(|p| p * inv)) {
            Ok(q) => {
                self.acc = acc;
                self.weight = weight;
                self.quad = q;
                self.score = self.score.max(d.score);
            }
            // Averaging produced an invalid polygon; keep the stronger of the two.
            Err(_) if d.score > self.score => *self = Merged::start(d),
            Err(_) => {}
        }
    }

    fn finish(self) -> Detection<F> {
        Detection::new(self.quad, self.score)
    }
}

/// Merges consecutive overlapping boxes of a row-major detection list (score
/// weighted corner averaging, merged score is the maximum), then applies
/// standard suppression.
pub fn locality_aware_nms<F: Scalar>(
    dets: &[Detection<F>],
    iou_threshold: f64,
    max_detections: usize,
) -> Vec<Detection<F>> {
    let thr = F::lit(iou_threshold);
    let mut merged = Vec::new();
    let mut cur: Option<Merged<F>> = None;
    for d in dets {
        match cur.as_mut() {
            Some(m) if quad_iou(&m.quad, &d.quad) > thr => m.absorb(d),
            _ => {
                if let Some(m) = cur.take() {
                    merged.push(m.finish());
                }
                cur = Some(Merged::start(d));
            }
        }
    }
    if let Some(m) = cur {
        merged.push(m.finish());
    }
    standard_nms(&merged, iou_threshold, max_detections)
}

/// Suppression according to `cfg.merge_mode`; output sorted by score, descending.
pub fn nms<F: Scalar>(dets: &[Detection<F>], cfg: &DecodeConfig) -> Vec<Detection<F>> {
    match cfg.merge_mode {
        MergeMode::Standard => standard_nms(dets, cfg.nms_iou, cfg.max_detections),
        MergeMode::LocalityAware => locality_aware_nms(dets, cfg.nms_iou, cfg.max_detections),
    }
}

/// Decoding followed by suppression.
pub fn detect<F: Scalar>(
    maps: DenseMaps<'_, F>,
    stride: usize,
    cfg: &DecodeConfig,
) -> Vec<Detection<F>> {
    nms(&decode_rbox(maps, stride, cfg).detections, cfg)
}

/// `x1,y1,...,x4,y4,score` lines with two decimals.
pub fn format_predictions<F: Scalar>(dets: &[Detection<F>]) -> String {
    let mut s = String::new();
    for d in dets {
        let c = d.quad.coords();
        let fields: Vec<String> = c.iter().map(|v| format!("{:.2}", v.as_f64())).collect();
        s.push_str(&fields.join(","));
        s.push_str(&format!(",{:.2}\n", d.score.as_f64()));
    }
    s
}

/// Parses the output of [`format_predictions`]; `path` is used in error messages.
pub fn parse_predictions<F: Scalar>(text: &str, path: &str) -> Result<Vec<Detection<F>>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            msg,
        };
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| err(format!("bad number `{f}`: {e}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != 9 {
            return Err(err(format!("expected 9 fields, found {}", vals.len())));
        }
        let coords: [F; 8] = std::array::from_fn(|k| F::lit(vals[k]));
        let q = QuadBox::from_coords(coords).map_err(|e| err(e.to_string()))?;
        if !(0.0..=1.0).contains(&vals[8]) {
            return Err(err(format!("score {} outside [0, 1]", vals[8])));
        }
        out.push(Detection::new(q, F::lit(vals[8])));
    }
    Ok(out)
}
