//! Independent reference implementations used to cross-check the library.
//!
//! Everything here is written from the definitions, deliberately without
//! reusing the library's algorithms (only its data types).

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use textcontour::geometry::{quad_iou, Detection, Point, QuadBox, RotatedBox};
use textcontour::targets::Instance;

/// Even-odd crossing test for a point strictly inside a polygon.
pub fn crossing_inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        if (y0 > y) != (y1 > y) {
            let xc = x0 + (y - y0) / (y1 - y0) * (x1 - x0);
            if x < xc {
                inside = !inside;
            }
        }
    }
    inside
}

fn pts(q: &QuadBox<f64>) -> Vec<(f64, f64)> {
    q.vertices().iter().map(|p| (p.x, p.y)).collect()
}

/// Monte-Carlo IoU: uniform samples over the joint bounding box.
pub fn monte_carlo_iou(
    a: &QuadBox<f64>,
    b: &QuadBox<f64>,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let (pa, pb) = (pts(a), pts(b));
    let all: Vec<(f64, f64)> = pa.iter().chain(&pb).copied().collect();
    let x0 = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x1 = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y0 = all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y1 = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let x = rng.gen_range(x0..x1);
        let y = rng.gen_range(y0..y1);
        let (ia, ib) = (crossing_inside(&pa, x, y), crossing_inside(&pb, x, y));
        inter += (ia && ib) as usize;
        union += (ia || ib) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pixels whose centers fall inside `q` by the crossing test, as a row-major 0/1 grid.
pub fn raster_oracle(q: &QuadBox<f64>, h: usize, w: usize) -> Vec<u8> {
    let p = pts(q);
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = crossing_inside(&p, x as f64 + 0.5, y as f64 + 0.5) as u8;
        }
    }
    out
}

/// Whether pixel `(px, py)` lies on the one-pixel-wide outline of `q`.
///
/// Per edge: sample the edge at every pixel-center coordinate of its dominant
/// axis inside the edge's extent; the pixel containing that sample is on the
/// outline. Vertex pixels are always on the outline. Evaluated per pixel.
pub fn on_outline(q: &QuadBox<f64>, px: usize, py: usize) -> bool {
    let v = q.vertices();
    let hit = |x: f64, y: f64| x.floor() == px as f64 && y.floor() == py as f64;
    for i in 0..4 {
        let (a, b) = (v[i], v[(i + 1) % 4]);
        if hit(a.x, a.y) {
            return true;
        }
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        if dx.abs() >= dy.abs() {
            if dx == 0.0 {
                continue;
            }
            let c = px as f64 + 0.5;
            if c >= a.x.min(b.x) && c <= a.x.max(b.x) && hit(c, a.y + (c - a.x) / dx * dy) {
                return true;
            }
        } else {
            let c = py as f64 + 0.5;
            if c >= a.y.min(b.y) && c <= a.y.max(b.y) && hit(a.x + (c - a.y) / dy * dx, c) {
                return true;
            }
        }
    }
    false
}

/// Contour map by exhaustive search: Chebyshev distance from every pixel to
/// every outline pixel, then the banded value.
pub fn contour_oracle(quads: &[QuadBox<f64>], h: usize, w: usize) -> Vec<f64> {
    let mut outline = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if quads.iter().any(|q| on_outline(q, x, y)) {
                outline.push((y as i64, x as i64));
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let d = outline
                .iter()
                .map(|&(oy, ox)| (oy - y).abs().max((ox - x).abs()))
                .min();
            out[y as usize * w + x as usize] = match d {
                Some(0) => 1.0,
                Some(1) => 0.9,
                Some(2) | Some(3) => 0.6,
                _ => 0.0,
            };
        }
    }
    out
}

/// Greedy one-to-one matching recomputed from a full IoU matrix.
///
/// Returns `(tp, fp, discarded)`.
pub fn greedy_replay(
    dets: &[Detection<f64>],
    gts: &[Instance<f64>],
    thr: f64,
) -> (usize, usize, usize) {
    let iou: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| gts.iter().map(|g| quad_iou(&d.quad, &g.quad)).collect())
        .collect();
    let mut visited = vec![false; dets.len()];
    let mut taken = vec![false; gts.len()];
    let (mut tp, mut fp, mut discarded) = (0, 0, 0);
    for _ in 0..dets.len() {
        // Highest remaining score; earliest index on ties.
        let mut d = usize::MAX;
        for i in 0..dets.len() {
            if !visited[i] && (d == usize::MAX || dets[i].score > dets[d].score) {
                d = i;
            }
        }
        visited[d] = true;
        let mut g = usize::MAX;
        for j in 0..gts.len() {
            if !taken[j] && iou[d][j] >= thr && (g == usize::MAX || iou[d][j] > iou[d][g]) {
                g = j;
            }
        }
        if g == usize::MAX {
            fp += 1;
        } else {
            taken[g] = true;
            if gts[g].dont_care {
                discarded += 1;
            } else {
                tp += 1;
            }
        }
    }
    (tp, fp, discarded)
}

/// Central finite difference of `f` with respect to coordinate `i` of `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[i] += h;
    m[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

/// Relative error with an absolute floor so tiny gradients compare sensibly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// A random rectangle of moderate size and arbitrary rotation.
pub fn random_rbox(rng: &mut ChaCha8Rng, extent: f64) -> RotatedBox<f64> {
    let w = rng.gen_range(0.1 * extent..0.5 * extent);
    let h = rng.gen_range(0.1 * extent..0.5 * extent);
    let c = Point::new(
        rng.gen_range(0.3 * extent..0.7 * extent),
        rng.gen_range(0.3 * extent..0.7 * extent),
    );
    RotatedBox::new(c, w, h, rng.gen_range(-3.2..3.2))
}

/// A random convex quad: a perturbed rotated rectangle.
pub fn random_quad(rng: &mut ChaCha8Rng, extent: f64) -> QuadBox<f64> {
    loop {
        let r = random_rbox(rng, extent);
        let jitter = 0.08 * r.width.min(r.height);
        let c = r.corners().map(|p| {
            Point::new(
                p.x + rng.gen_range(-jitter..jitter),
                p.y + rng.gen_range(-jitter..jitter),
            )
        });
        if let Ok(q) = QuadBox::new(c) {
            if q.is_convex() {
                return q;
            }
        }
    }
}

/// Rotates every vertex of `q` about `c`.
pub fn rotate_quad(q: &QuadBox<f64>, c: Point<f64>, angle: f64) -> QuadBox<f64> {
    QuadBox::new(q.vertices().map(|p| p.rotate_about(c, angle)))
        .expect("rotation preserves simplicity")
}
