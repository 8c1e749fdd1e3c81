//! Geometric primitives for word boxes.
//!
//! Coordinates are image pixels with `y` pointing down. A [`QuadBox`] is always
//! stored clockwise as seen on screen (positive shoelace sum in these
//! coordinates), starting from its top-left-most vertex. A [`RotatedBox`]
//! measures `theta` counter-clockwise on screen from the +x axis, so its width
//! axis is `(cos θ, -sin θ)` and its height axis `(sin θ, cos θ)`.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Mask;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("quadrilateral has (near) zero area")]
    Degenerate,
    #[error("quadrilateral is self-intersecting")]
    NotSimple,
    #[error("vertices are collinear; no enclosing rectangle")]
    Collinear,
    #[error("shrinking collapsed the polygon")]
    Collapsed,
    #[error("point ({x:.3}, {y:.3}) lies outside the rotated box")]
    PointOutside { x: f64, y: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite coordinate")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point<F> {
    pub x: F,
    pub y: F,
}

impl<F: Scalar> Point<F> {
    #[inline]
    pub fn new(x: F, y: F) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn dot(self, o: Self) -> F {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 2-D cross product.
    #[inline]
    pub fn cross(self, o: Self) -> F {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> F {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotates counter-clockwise on screen by `angle` around `center`.
    pub fn rotate_about(self, center: Self, angle: F) -> Self {
        let (s, c) = angle.sin_cos();
        let d = self - center;
        Point::new(center.x + d.x * c + d.y * s, center.y - d.x * s + d.y * c)
    }

    pub fn cast<G: Scalar>(self) -> Point<G> {
        Point::new(G::lit(self.x.as_f64()), G::lit(self.y.as_f64()))
    }
}

impl<F: Scalar> Add for Point<F> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl<F: Scalar> Sub for Point<F> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl<F: Scalar> Mul<F> for Point<F> {
    type Output = Self;
    #[inline]
    fn mul(self, k: F) -> Self {
        Point::new(self.x * k, self.y * k)
    }
}

/// Shoelace sum (twice the signed area, halved). Positive for screen-clockwise polygons.
pub fn polygon_signed_area<F: Scalar>(pts: &[Point<F>]) -> F {
    let n = pts.len();
    if n < 3 {
        return F::zero();
    }
    let mut acc = F::zero();
    for i in 0..n {
        acc += pts[i].cross(pts[(i + 1) % n]);
    }
    acc * F::lit(0.5)
}

fn orient<F: Scalar>(a: Point<F>, b: Point<F>, c: Point<F>) -> F {
    (b - a).cross(c - a)
}

fn on_segment<F: Scalar>(p: Point<F>, a: Point<F>, b: Point<F>, tol: F) -> bool {
    let ab = b - a;
    let len = ab.norm();
    if len <= F::zero() {
        return (p - a).norm() <= tol;
    }
    if (ab.cross(p - a) / len).abs() > tol {
        return false;
    }
    let t = ab.dot(p - a);
    t >= -tol * len && t <= len * len + tol * len
}

/// Closed-segment intersection test (touching counts).
fn segments_intersect<F: Scalar>(p1: Point<F>, p2: Point<F>, q1: Point<F>, q2: Point<F>) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    let z = F::zero();
    if ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z)) {
        return true;
    }
    let tol = F::epsilon();
    (d1 == z && on_segment(p1, q1, q2, tol))
        || (d2 == z && on_segment(p2, q1, q2, tol))
        || (d3 == z && on_segment(q1, p1, p2, tol))
        || (d4 == z && on_segment(q2, p1, p2, tol))
}

/// One word instance: four vertices, clockwise on screen from the top-left-most.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadBox<F> {
    vertices: [Point<F>; 4],
}

impl<F: Scalar> QuadBox<F> {
    /// Validates and normalizes vertex order. Any winding and starting vertex is accepted.
    pub fn new(vertices: [Point<F>; 4]) -> Result<Self, GeometryError> {
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let area = polygon_signed_area(&vertices);
        let scale = vertices
            .iter()
            .map(|p| p.x.abs().max(p.y.abs()))
            .fold(F::one(), F::max);
        if area.abs() <= F::epsilon() * F::lit(16.0) * scale * scale {
            return Err(GeometryError::Degenerate);
        }
        let [a, b, c, d] = vertices;
        if segments_intersect(a, b, c, d) || segments_intersect(b, c, d, a) {
            return Err(GeometryError::NotSimple);
        }
        Ok(Self::normalized(vertices))
    }

    pub fn from_coords(c: [F; 8]) -> Result<Self, GeometryError> {
        Self::new([
            Point::new(c[0], c[1]),
            Point::new(c[2], c[3]),
            Point::new(c[4], c[5]),
            Point::new(c[6], c[7]),
        ])
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn from_rect(x0: F, y0: F, x1: F, y1: F) -> Result<Self, GeometryError> {
        Self::from_coords([x0, y0, x1, y0, x1, y1, x0, y1])
    }

    /// Keeps the vertices as given, without validation or reordering.
    ///
    /// Only for annotations whose geometry is broken and which are carried as
    /// don't-care regions.
    pub fn raw(vertices: [Point<F>; 4]) -> Self {
        QuadBox { vertices }
    }

    fn normalized(mut v: [Point<F>; 4]) -> Self {
        if polygon_signed_area(&v) < F::zero() {
            v.reverse();
        }
        let start = (0..4)
            .min_by(|&i, &j| {
                let ki = (v[i].x + v[i].y, v[i].y);
                let kj = (v[j].x + v[j].y, v[j].y);
                ki.partial_cmp(&kj).unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0);
        v.rotate_left(start);
        QuadBox { vertices: v }
    }

    #[inline]
    pub fn vertices(&self) -> &[Point<F>; 4] {
        &self.vertices
    }

    pub fn coords(&self) -> [F; 8] {
        let v = &self.vertices;
        [
            v[0].x, v[0].y, v[1].x, v[1].y, v[2].x, v[2].y, v[3].x, v[3].y,
        ]
    }

    pub fn signed_area(&self) -> F {
        polygon_signed_area(&self.vertices)
    }

    pub fn area(&self) -> F {
        self.signed_area().abs()
    }

    pub fn is_simple(&self) -> bool {
        let [a, b, c, d] = self.vertices;
        !segments_intersect(a, b, c, d) && !segments_intersect(b, c, d, a)
    }

    pub fn is_convex(&self) -> bool {
        let v = &self.vertices;
        let s: Vec<F> = (0..4)
            .map(|i| orient(v[i], v[(i + 1) % 4], v[(i + 2) % 4]))
            .collect();
        s.iter().all(|&x| x >= F::zero()) || s.iter().all(|&x| x <= F::zero())
    }

    pub fn edge_lengths(&self) -> [F; 4] {
        let v = &self.vertices;
        [
            (v[1] - v[0]).norm(),
            (v[2] - v[1]).norm(),
            (v[3] - v[2]).norm(),
            (v[0] - v[3]).norm(),
        ]
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (F, F, F, F) {
        let mut b = (
            F::infinity(),
            F::infinity(),
            F::neg_infinity(),
            F::neg_infinity(),
        );
        for p in &self.vertices {
            b.0 = b.0.min(p.x);
            b.1 = b.1.min(p.y);
            b.2 = b.2.max(p.x);
            b.3 = b.3.max(p.y);
        }
        b
    }

    /// Applies an affine map to every vertex and renormalizes.
    pub fn map_points(&self, f: impl Fn(Point<F>) -> Point<F>) -> Result<Self, GeometryError> {
        let v = self.vertices;
        Self::new([f(v[0]), f(v[1]), f(v[2]), f(v[3])])
    }

    pub fn scale(&self, sx: F, sy: F) -> Result<Self, GeometryError> {
        self.map_points(|p| Point::new(p.x * sx, p.y * sy))
    }

    pub fn translate(&self, dx: F, dy: F) -> Self {
        let v = self.vertices;
        let t = |p: Point<F>| Point::new(p.x + dx, p.y + dy);
        QuadBox {
            vertices: [t(v[0]), t(v[1]), t(v[2]), t(v[3])],
        }
    }

    pub fn cast<G: Scalar>(&self) -> QuadBox<G> {
        let v = self.vertices;
        QuadBox {
            vertices: [v[0].cast(), v[1].cast(), v[2].cast(), v[3].cast()],
        }
    }

    /// Inside or on the boundary.
    pub fn contains(&self, p: Point<F>) -> bool {
        let v = &self.vertices;
        let tol = F::epsilon() * F::lit(64.0) * (F::one() + p.x.abs().max(p.y.abs()));
        let mut inside = false;
        for i in 0..4 {
            let a = v[i];
            let b = v[(i + 1) % 4];
            if on_segment(p, a, b, tol) {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Splits into two triangles with disjoint interiors covering the quad.
    pub fn triangles(&self) -> [[Point<F>; 3]; 2] {
        let [a, b, c, d] = self.vertices;
        let s = self.signed_area().signum();
        let z = F::zero();
        if orient(a, b, c) * s > z && orient(a, c, d) * s > z {
            [[a, b, c], [a, c, d]]
        } else {
            [[b, c, d], [b, d, a]]
        }
    }
}

/// Convex polygon intersection by Sutherland-Hodgman. Both inputs must be
/// screen-clockwise (positive signed area).
pub fn convex_intersection<F: Scalar>(subject: &[Point<F>], clip: &[Point<F>]) -> Vec<Point<F>> {
    let mut out: Vec<Point<F>> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut out);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let cur_in = orient(a, b, cur) >= F::zero();
            let prev_in = orient(a, b, prev) >= F::zero();
            if cur_in {
                if !prev_in {
                    out.push(line_intersection(prev, cur, a, b));
                }
                out.push(cur);
            } else if prev_in {
                out.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    out
}

fn line_intersection<F: Scalar>(p: Point<F>, q: Point<F>, a: Point<F>, b: Point<F>) -> Point<F> {
    let dp = q - p;
    let denom = dp.cross(b - a);
    if denom == F::zero() {
        return q;
    }
    let t = (a - p).cross(b - a) / denom;
    p + dp * t
}

fn oriented_triangle<F: Scalar>(t: [Point<F>; 3]) -> [Point<F>; 3] {
    if polygon_signed_area(&t) < F::zero() {
        [t[0], t[2], t[1]]
    } else {
        t
    }
}

/// Area of `a ∩ b` for simple (possibly non-convex) quads.
pub fn intersection_area<F: Scalar>(a: &QuadBox<F>, b: &QuadBox<F>) -> F {
    let (ax0, ay0, ax1, ay1) = a.bounds();
    let (bx0, by0, bx1, by1) = b.bounds();
    if ax1 < bx0 || bx1 < ax0 || ay1 < by0 || by1 < ay0 {
        return F::zero();
    }
    let mut total = F::zero();
    for ta in a.triangles() {
        let ta = oriented_triangle(ta);
        for tb in b.triangles() {
            let tb = oriented_triangle(tb);
            let poly = convex_intersection(&ta, &tb);
            total += polygon_signed_area(&poly).max(F::zero());
        }
    }
    total
}

/// Intersection over union; zero-area inputs give 0.
pub fn quad_iou<F: Scalar>(a: &QuadBox<F>, b: &QuadBox<F>) -> F {
    let area_a = a.area();
    let area_b = b.area();
    if area_a <= F::zero() || area_b <= F::zero() {
        return F::zero();
    }
    let inter = intersection_area(a, b);
    let union = area_a + area_b - inter;
    if union <= F::zero() {
        return F::zero();
    }
    (inter / union).max(F::zero()).min(F::one())
}

/// Center/size/angle rectangle. See the module docs for the angle convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedBox<F> {
    pub cx: F,
    pub cy: F,
    pub width: F,
    pub height: F,
    pub theta: F,
}

/// Reduces an angle modulo π into `[-π/4, 3π/4)`.
pub fn canonical_angle<F: Scalar>(theta: F) -> F {
    let pi = F::PI();
    let lo = -F::FRAC_PI_4();
    let mut t = theta - lo;
    t = t - (t / pi).floor() * pi;
    if t >= pi {
        t -= pi;
    }
    if t < F::zero() {
        t = F::zero();
    }
    t + lo
}

impl<F: Scalar> RotatedBox<F> {
    pub fn new(center: Point<F>, width: F, height: F, theta: F) -> Self {
        RotatedBox {
            cx: center.x,
            cy: center.y,
            width,
            height,
            theta: canonical_angle(theta),
        }
    }

    pub fn center(&self) -> Point<F> {
        Point::new(self.cx, self.cy)
    }

    /// Unit width axis and unit height axis.
    pub fn axes(&self) -> (Point<F>, Point<F>) {
        let (s, c) = self.theta.sin_cos();
        (Point::new(c, -s), Point::new(s, c))
    }

    pub fn area(&self) -> F {
        self.width * self.height
    }

    /// Top-left, top-right, bottom-right, bottom-left in the box's own frame.
    pub fn corners(&self) -> [Point<F>; 4] {
        let (u, v) = self.axes();
        let c = self.center();
        let hw = self.width * F::lit(0.5);
        let hh = self.height * F::lit(0.5);
        [
            c - u * hw - v * hh,
            c + u * hw - v * hh,
            c + u * hw + v * hh,
            c - u * hw + v * hh,
        ]
    }

    pub fn to_quad(&self) -> Result<QuadBox<F>, GeometryError> {
        QuadBox::new(self.corners())
    }

    /// Box-frame coordinates of `p` relative to the center: (along width, along height).
    pub fn local(&self, p: Point<F>) -> (F, F) {
        let (u, v) = self.axes();
        let d = p - self.center();
        (d.dot(u), d.dot(v))
    }

    pub fn contains(&self, p: Point<F>, tol: F) -> bool {
        let (a, b) = self.local(p);
        a.abs() <= self.width * F::lit(0.5) + tol && b.abs() <= self.height * F::lit(0.5) + tol
    }
}

fn convex_hull<F: Scalar>(pts: &[Point<F>]) -> Vec<Point<F>> {
    let mut p = pts.to_vec();
    p.sort_by(|a, b| {
        (a.x, a.y)
            .partial_cmp(&(b.x, b.y))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut lower: Vec<Point<F>> = Vec::new();
    for &q in &p {
        while lower.len() >= 2
            && orient(lower[lower.len() - 2], lower[lower.len() - 1], q) <= F::zero()
        {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<Point<F>> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2
            && orient(upper[upper.len() - 2], upper[upper.len() - 1], q) <= F::zero()
        {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Minimum-area enclosing rectangle (rotating calipers over the hull).
///
/// The rectangle's width axis is whichever of its two edge directions is most
/// parallel to the quad's first edge, so a word's reading direction maps to
/// `width`.
pub fn min_area_rect<F: Scalar>(q: &QuadBox<F>) -> Result<RotatedBox<F>, GeometryError> {
    let hull = convex_hull(q.vertices());
    if hull.len() < 3 || polygon_signed_area(&hull).abs() <= F::epsilon() {
        return Err(GeometryError::Collinear);
    }
    let n = hull.len();
    // Candidates whose areas agree to within rounding are ranked by perimeter, so the choice
    // does not depend on the orientation of the input.
    let tie = F::epsilon().sqrt();
    // (area, perimeter, u, v, a0, a1, b0, b1)
    #[allow(clippy::type_complexity)]
    let mut best: Option<(F, F, Point<F>, Point<F>, F, F, F, F)> = None;
    for i in 0..n {
        let e = hull[(i + 1) % n] - hull[i];
        let len = e.norm();
        if len <= F::zero() {
            continue;
        }
        let u = e * (F::one() / len);
        let v = Point::new(-u.y, u.x);
        let (mut a0, mut a1, mut b0, mut b1) = (
            F::infinity(),
            F::neg_infinity(),
            F::infinity(),
            F::neg_infinity(),
        );
        for &p in &hull {
            let a = p.dot(u);
            let b = p.dot(v);
            a0 = a0.min(a);
            a1 = a1.max(a);
            b0 = b0.min(b);
            b1 = b1.max(b);
        }
        let area = (a1 - a0) * (b1 - b0);
        let perimeter = (a1 - a0) + (b1 - b0);
        let better = match &best {
            None => true,
            Some(b) => {
                area < b.0 * (F::one() - tie)
                    || (area <= b.0 * (F::one() + tie) && perimeter < b.1 * (F::one() - tie))
            }
        };
        if better {
            best = Some((area, perimeter, u, v, a0, a1, b0, b1));
        }
    }
    let (_, _, u, v, a0, a1, b0, b1) = best.ok_or(GeometryError::Collinear)?;
    let half = F::lit(0.5);
    let center = u * ((a0 + a1) * half) + v * ((b0 + b1) * half);
    let (len_u, len_v) = (a1 - a0, b1 - b0);

    let first = q.vertices()[1] - q.vertices()[0];
    let (axis, width, height) = if first.dot(u).abs() >= first.dot(v).abs() {
        (u, len_u, len_v)
    } else {
        (v, len_v, len_u)
    };
    let theta = (-axis.y).atan2(axis.x);
    Ok(RotatedBox::new(center, width, height, theta))
}

/// Moves each vertex inward along both incident edges by `ratio * r_i`, where
/// `r_i` is the shorter of the two edges meeting at vertex `i`.
pub fn shrink_quad<F: Scalar>(q: &QuadBox<F>, ratio: F) -> Result<QuadBox<F>, GeometryError> {
    if !(ratio >= F::zero() && ratio < F::lit(0.5)) {
        return Err(GeometryError::InvalidArgument(format!(
            "shrink ratio {ratio} not in [0, 0.5)"
        )));
    }
    if ratio == F::zero() {
        return Ok(q.clone());
    }
    let v = q.vertices();
    let lens = q.edge_lengths();
    let mut out = [Point::default(); 4];
    for i in 0..4 {
        let prev = (i + 3) % 4;
        let next = (i + 1) % 4;
        let r = lens[prev].min(lens[i]);
        let to_next = (v[next] - v[i]) * (F::one() / lens[i]);
        let to_prev = (v[prev] - v[i]) * (F::one() / lens[prev]);
        out[i] = v[i] + (to_next + to_prev) * (ratio * r);
    }
    if polygon_signed_area(&out) <= F::zero() {
        return Err(GeometryError::Collapsed);
    }
    QuadBox::new(out).map_err(|_| GeometryError::Collapsed)
}

/// Perpendicular distances `(top, right, bottom, left)` from `p` to the edges of `r`.
pub fn point_edge_distances<F: Scalar>(
    p: Point<F>,
    r: &RotatedBox<F>,
) -> Result<[F; 4], GeometryError> {
    let (a, b) = r.local(p);
    let hw = r.width * F::lit(0.5);
    let hh = r.height * F::lit(0.5);
    let d = [hh + b, hw - a, hh - b, hw + a];
    if d.iter().any(|&x| !(x >= F::zero())) {
        return Err(GeometryError::PointOutside {
            x: p.x.as_f64(),
            y: p.y.as_f64(),
        });
    }
    Ok(d)
}

/// Pixel `(x, y)` is set iff its center `(x + 0.5, y + 0.5)` lies inside or on `q`.
pub fn rasterize_polygon<F: Scalar>(q: &QuadBox<F>, h: usize, w: usize) -> Mask {
    let mut mask = Mask::new(h, w);
    fill_polygon(q, &mut mask);
    mask
}

/// Rasterizes `q` into an existing mask (union).
pub fn fill_polygon<F: Scalar>(q: &QuadBox<F>, mask: &mut Mask) {
    for (y, x) in polygon_pixels(q, mask.h, mask.w) {
        mask.set(y, x, 1);
    }
}

/// Canvas pixels whose centers fall inside or on `q`, row-major.
pub fn polygon_pixels<F: Scalar>(q: &QuadBox<F>, h: usize, w: usize) -> Vec<(usize, usize)> {
    let (x0, y0, x1, y1) = q.bounds();
    let half = F::lit(0.5);
    let clamp = |v: F, hi: usize| -> usize {
        let v = v.max(F::zero()).min(F::from_usize_lossy(hi));
        v.to_usize().unwrap_or(0)
    };
    let (xs, xe) = (
        clamp((x0 - half).floor(), w),
        clamp((x1 - half).ceil() + F::one(), w),
    );
    let (ys, ye) = (
        clamp((y0 - half).floor(), h),
        clamp((y1 - half).ceil() + F::one(), h),
    );
    let mut out = Vec::new();
    for y in ys..ye {
        for x in xs..xe {
            let c = Point::new(F::from_usize_lossy(x) + half, F::from_usize_lossy(y) + half);
            if q.contains(c) {
                out.push((y, x));
            }
        }
    }
    out
}

/// A scored word box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection<F> {
    pub quad: QuadBox<F>,
    pub score: F,
}

impl<F: Scalar> Detection<F> {
    pub fn new(quad: QuadBox<F>, score: F) -> Self {
        Detection {
            quad,
            score: score.max(F::zero()).min(F::one()),
        }
    }
}
