//! Dense training targets at output resolution: contour band, shrunk score
//! map, per-pixel rotated-box geometry and the train-ignore mask.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    min_area_rect, point_edge_distances, polygon_pixels, shrink_quad, Point, QuadBox,
};
use crate::grid::{Grid, Mask};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Transcription marking a region excluded from training and evaluation.
pub const DONT_CARE: &str = "###";

/// Contour value on the boundary, one pixel away, and two or three pixels away.
pub const CONTOUR_ON: f64 = 1.0;
pub const CONTOUR_NEAR: f64 = 0.9;
pub const CONTOUR_BAND: f64 = 0.6;
/// Outermost Chebyshev distance that still receives a nonzero value.
pub const CONTOUR_REACH: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance<F> {
    pub quad: QuadBox<F>,
    pub text: String,
    pub dont_care: bool,
}

impl<F: Scalar> Instance<F> {
    pub fn new(quad: QuadBox<F>, text: impl Into<String>) -> Self {
        let text = text.into();
        let dont_care = text == DONT_CARE;
        Instance {
            quad,
            text,
            dont_care,
        }
    }
}

/// An RGB image with its word annotations (coordinates may exceed the canvas).
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage<F> {
    pub image: RgbImage,
    pub instances: Vec<Instance<F>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    pub shrink_ratio: f64,
    /// Shorter rectangle side, in output pixels, below which an instance is ignored.
    pub min_side: f64,
    /// Input pixels per output pixel.
    pub stride: usize,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            shrink_ratio: 0.3,
            min_side: 2.0,
            stride: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps<F> {
    pub contour: Grid<F>,
    pub score: Mask,
    /// top, right, bottom, left; output-pixel units.
    pub distances: [Grid<F>; 4],
    pub angle: Grid<F>,
    pub ignore: Mask,
}

impl<F: Scalar> TargetMaps<F> {
    pub fn height(&self) -> usize {
        self.score.h
    }

    pub fn width(&self) -> usize {
        self.score.w
    }

    /// Checks the structural invariants every target set must satisfy.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let allowed = [0.0, CONTOUR_BAND, CONTOUR_NEAR, CONTOUR_ON].map(F::lit);
        if let Some(v) = self.contour.data.iter().find(|v| !allowed.contains(v)) {
            return Err(format!("contour value {v} outside the band value set"));
        }
        for i in 0..self.score.len() {
            let s = self.score.data[i];
            if s > 1 || self.ignore.data[i] > 1 {
                return Err(format!("non-binary mask at {i}"));
            }
            if s == 1 && self.ignore.data[i] == 1 {
                return Err(format!("pixel {i} is both positive and ignored"));
            }
            let d: Vec<F> = self.distances.iter().map(|g| g.data[i]).collect();
            if s == 1 {
                if d.iter().any(|&v| !(v > F::zero())) {
                    return Err(format!(
                        "positive pixel {i} has non-positive distance {d:?}"
                    ));
                }
            } else if d.iter().any(|&v| v != F::zero()) || self.angle.data[i] != F::zero() {
                return Err(format!("non-positive pixel {i} carries geometry"));
            }
        }
        Ok(())
    }
}

/// Value of the contour target at Chebyshev distance `dist` from the boundary set.
pub fn contour_value(dist: usize) -> f64 {
    match dist {
        0 => CONTOUR_ON,
        1 => CONTOUR_NEAR,
        d if d <= CONTOUR_REACH => CONTOUR_BAND,
        _ => 0.0,
    }
}

/// One-pixel-wide boundary of `q` on an `h x w` canvas (8-connected, may repeat pixels).
///
/// Each edge is walked along its dominant axis: every pixel column (or row)
/// whose center lies within the edge's extent contributes the pixel the edge
/// crosses at that center. The pixels holding the vertices are included.
pub fn boundary_pixels<F: Scalar>(q: &QuadBox<F>, h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut push = |x: F, y: F| {
        let (fx, fy) = (x.floor(), y.floor());
        if fx >= F::zero() && fy >= F::zero() {
            let (xi, yi) = (
                fx.to_usize().unwrap_or(usize::MAX),
                fy.to_usize().unwrap_or(usize::MAX),
            );
            if xi < w && yi < h {
                out.push((yi, xi));
            }
        }
    };
    let v = q.vertices();
    let half = F::lit(0.5);
    for i in 0..4 {
        let (p, r) = (v[i], v[(i + 1) % 4]);
        push(p.x, p.y);
        let (dx, dy) = (r.x - p.x, r.y - p.y);
        if dx.abs() >= dy.abs() {
            if dx == F::zero() {
                continue;
            }
            let (lo, hi) = (p.x.min(r.x), p.x.max(r.x));
            let mut c = (lo - half).ceil() + half;
            while c <= hi {
                push(c, p.y + (c - p.x) / dx * dy);
                c += F::one();
            }
        } else {
            let (lo, hi) = (p.y.min(r.y), p.y.max(r.y));
            let mut c = (lo - half).ceil() + half;
            while c <= hi {
                push(p.x + (c - p.y) / dy * dx, c);
                c += F::one();
            }
        }
    }
    out
}

/// Contour target: 1 on the rasterized boundaries, 0.9 at Chebyshev distance 1,
/// 0.6 up to distance 3, 0 elsewhere. Overlapping bands keep the maximum.
pub fn make_contour_target<F: Scalar>(quads: &[QuadBox<F>], h: usize, w: usize) -> Grid<F> {
    let mut best = Grid::filled(h, w, usize::MAX);
    let r = CONTOUR_REACH as isize;
    for q in quads {
        for (y, x) in boundary_pixels(q, h, w) {
            for dy in -r..=r {
                let yy = y as isize + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let xx = x as isize + dx;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let d = dx.unsigned_abs().max(dy.unsigned_abs());
                    let cell = best.at_mut(yy as usize, xx as usize);
                    *cell = (*cell).min(d);
                }
            }
        }
    }
    best.map(|d| F::lit(contour_value(d)))
}

/// Per-instance outcome of score-map construction.
#[derive(Debug, Clone)]
struct ShrunkInstance<F> {
    shrunk: Option<QuadBox<F>>,
}

fn shrink_instances<F: Scalar>(
    quads: &[QuadBox<F>],
    dont_care: &[bool],
    shrink_ratio: f64,
    min_side: f64,
) -> Vec<ShrunkInstance<F>> {
    quads
        .iter()
        .zip(dont_care)
        .map(|(q, &dc)| {
            if dc || !q.is_simple() || q.area() <= F::zero() {
                return ShrunkInstance { shrunk: None };
            }
            let big_enough = min_area_rect(q)
                .map(|r| r.width.min(r.height) >= F::lit(min_side))
                .unwrap_or(false);
            let shrunk = if big_enough {
                shrink_quad(q, F::lit(shrink_ratio)).ok()
            } else {
                None
            };
            ShrunkInstance { shrunk }
        })
        .collect()
}

/// Score map (union of shrunk trainable quads) and ignore mask (don't-care
/// quads plus instances that are too small or collapse when shrunk).
pub fn make_score_target<F: Scalar>(
    quads: &[QuadBox<F>],
    dont_care: &[bool],
    h: usize,
    w: usize,
    shrink_ratio: f64,
) -> (Mask, Mask) {
    make_score_target_with(
        quads,
        dont_care,
        h,
        w,
        shrink_ratio,
        TargetConfig::default().min_side,
    )
}

pub fn make_score_target_with<F: Scalar>(
    quads: &[QuadBox<F>],
    dont_care: &[bool],
    h: usize,
    w: usize,
    shrink_ratio: f64,
    min_side: f64,
) -> (Mask, Mask) {
    let shrunk = shrink_instances(quads, dont_care, shrink_ratio, min_side);
    let mut score = Mask::new(h, w);
    let mut ignore = Mask::new(h, w);
    for (q, s) in quads.iter().zip(&shrunk) {
        match &s.shrunk {
            Some(sq) => {
                for (y, x) in polygon_pixels(sq, h, w) {
                    score.set(y, x, 1);
                }
            }
            None => {
                for (y, x) in polygon_pixels(q, h, w) {
                    ignore.set(y, x, 1);
                }
            }
        }
    }
    for (s, &i) in score.data.iter_mut().zip(&ignore.data) {
        if i != 0 {
            *s = 0;
        }
    }
    (score, ignore)
}

/// Per-pixel rotated-box targets for every positive pixel of `score`.
///
/// A pixel belongs to the instance whose shrunk polygon contains it; when
/// several do, the one with the smallest area wins. Distances are measured from
/// the pixel center in output-pixel units.
pub fn make_rbox_target<F: Scalar>(
    quads: &[QuadBox<F>],
    dont_care: &[bool],
    h: usize,
    w: usize,
    score: &Mask,
    shrink_ratio: f64,
) -> ([Grid<F>; 4], Grid<F>) {
    let (d, a, _) = rbox_maps(
        quads,
        dont_care,
        h,
        w,
        score,
        shrink_ratio,
        TargetConfig::default().min_side,
    );
    (d, a)
}

#[allow(clippy::type_complexity)]
fn rbox_maps<F: Scalar>(
    quads: &[QuadBox<F>],
    dont_care: &[bool],
    h: usize,
    w: usize,
    score: &Mask,
    shrink_ratio: f64,
    min_side: f64,
) -> ([Grid<F>; 4], Grid<F>, Vec<(usize, usize)>) {
    let shrunk = shrink_instances(quads, dont_care, shrink_ratio, min_side);
    let mut owner: Grid<usize> = Grid::filled(h, w, usize::MAX);
    let mut order: Vec<usize> = (0..quads.len())
        .filter(|&i| shrunk[i].shrunk.is_some())
        .collect();
    order.sort_by(|&a, &b| {
        quads[b]
            .area()
            .partial_cmp(&quads[a].area())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in &order {
        if let Some(sq) = &shrunk[i].shrunk {
            for (y, x) in polygon_pixels(sq, h, w) {
                owner.set(y, x, i);
            }
        }
    }
    let rects: Vec<_> = quads.iter().map(|q| min_area_rect(q).ok()).collect();
    let mut dist: [Grid<F>; 4] = std::array::from_fn(|_| Grid::new(h, w));
    let mut angle = Grid::new(h, w);
    let mut rejected = Vec::new();
    let half = F::lit(0.5);
    for y in 0..h {
        for x in 0..w {
            if score.get(y, x) == 0 {
                continue;
            }
            let i = owner.get(y, x);
            let rect = if i == usize::MAX {
                None
            } else {
                rects[i].as_ref()
            };
            let Some(r) = rect else {
                rejected.push((y, x));
                continue;
            };
            let p = Point::new(F::from_usize_lossy(x) + half, F::from_usize_lossy(y) + half);
            match point_edge_distances(p, r) {
                Ok(d) if d.iter().all(|&v| v > F::zero()) => {
                    for (c, v) in d.into_iter().enumerate() {
                        dist[c].set(y, x, v);
                    }
                    angle.set(y, x, r.theta);
                }
                _ => rejected.push((y, x)),
            }
        }
    }
    (dist, angle, rejected)
}

/// Builds every target map for one sample at `1/stride` resolution.
pub fn build_targets<F: Scalar>(
    sample: &AnnotatedImage<F>,
    cfg: &TargetConfig,
) -> Result<TargetMaps<F>> {
    let (iw, ih) = sample.image.dimensions();
    let (iw, ih) = (iw as usize, ih as usize);
    let s = cfg.stride;
    if s == 0 || iw % s != 0 || ih % s != 0 {
        return Err(Error::Config(format!(
            "image {iw}x{ih} is not divisible by the output stride {s}"
        )));
    }
    let (h, w) = (ih / s, iw / s);
    let inv = F::one() / F::from_usize_lossy(s);
    let mut quads = Vec::with_capacity(sample.instances.len());
    let mut dont_care = Vec::with_capacity(sample.instances.len());
    for inst in &sample.instances {
        match inst.quad.scale(inv, inv) {
            Ok(q) => {
                quads.push(q);
                dont_care.push(inst.dont_care);
            }
            Err(_) => {
                let v = inst
                    .quad
                    .vertices()
                    .map(|p| Point::new(p.x * inv, p.y * inv));
                quads.push(QuadBox::raw(v));
                dont_care.push(true);
            }
        }
    }
    let contour_quads: Vec<QuadBox<F>> = quads
        .iter()
        .zip(&dont_care)
        .filter(|(q, &dc)| !dc && q.is_simple())
        .map(|(q, _)| q.clone())
        .collect();
    let contour = make_contour_target(&contour_quads, h, w);
    let (mut score, mut ignore) =
        make_score_target_with(&quads, &dont_care, h, w, cfg.shrink_ratio, cfg.min_side);
    let (distances, angle, rejected) = rbox_maps(
        &quads,
        &dont_care,
        h,
        w,
        &score,
        cfg.shrink_ratio,
        cfg.min_side,
    );
    for (y, x) in rejected {
        score.set(y, x, 0);
        ignore.set(y, x, 1);
    }
    Ok(TargetMaps {
        contour,
        score,
        distances,
        angle,
        ignore,
    })
}
