//! Exact planar convex geometry on the binary lift.
//!
//! Everything here works on raw `f64` coordinates without tolerances except
//! the single feasibility threshold [`SEPARATION_THRESHOLD`]. Degenerate hulls
//! (a point or a segment) go through the same edge-scan code as polygons.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hull distances at or below this value are treated as touching.
pub const SEPARATION_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("empty point set")]
    EmptyInput,
    #[error("non-finite point coordinate")]
    NonFinitePoint,
    #[error("direction must be non-zero")]
    ZeroDirection,
    #[error("both classes must contain at least one point")]
    EmptyClass,
    #[error("B = 0: the offset η cannot shift binary scores")]
    NoOffsetControl,
    #[error("direction does not separate the two clouds (margin {0})")]
    NonSeparatingDirection(f64),
    #[error("certificate is infeasible")]
    InfeasibleCertificate,
}

pub type Result<T> = std::result::Result<T, GeomError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Unit vector in the same direction, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        (n > 0.0).then(|| self.scale(1.0 / n))
    }
}

impl std::ops::Add for Point2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

/// Convex hull vertices in counter-clockwise order, collinear points dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarHull {
    pub vertices: Vec<Point2>,
}

impl PlanarHull {
    /// Inside-or-on test; only meaningful for hulls with at least 3 vertices.
    fn contains(&self, p: Point2) -> bool {
        let v = &self.vertices;
        let n = v.len();
        n >= 3 && (0..n).all(|i| (v[(i + 1) % n] - v[i]).cross(p - v[i]) >= 0.0)
    }

    /// Boundary segments; a point hull yields one zero-length segment.
    fn edges(&self) -> Vec<(Point2, Point2)> {
        let v = &self.vertices;
        match v.len() {
            1 => vec![(v[0], v[0])],
            2 => vec![(v[0], v[1])],
            n => (0..n).map(|i| (v[i], v[(i + 1) % n])).collect(),
        }
    }
}

fn check_points(points: &[Point2]) -> Result<()> {
    if points.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(GeomError::NonFinitePoint);
    }
    Ok(())
}

/// Andrew's monotone chain.
pub fn convex_hull(points: &[Point2]) -> Result<PlanarHull> {
    check_points(points)?;
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Ok(PlanarHull { vertices: pts });
    }
    // turns within rounding error of the coordinates count as straight
    let scale = pts.iter().map(|p| p.x.abs().max(p.y.abs())).fold(0.0, f64::max);
    let tol = 16.0 * f64::EPSILON * scale;
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if (b - a).cross(p - a) <= tol * ((b - a).norm() + (p - a).norm()) {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    Ok(PlanarHull { vertices: hull })
}

/// `m(θ) = min_{S+} θ·z − max_{S−} θ·z`.
pub fn directional_margin(theta: Point2, plus: &[Point2], minus: &[Point2]) -> Result<f64> {
    if theta.x == 0.0 && theta.y == 0.0 {
        return Err(GeomError::ZeroDirection);
    }
    if plus.is_empty() || minus.is_empty() {
        return Err(GeomError::EmptyClass);
    }
    let (lo, hi) = projection_extremes(theta, plus, minus);
    Ok(lo - hi)
}

/// `(min over S+ of θ·z, max over S− of θ·z)`.
pub fn projection_extremes(theta: Point2, plus: &[Point2], minus: &[Point2]) -> (f64, f64) {
    let lo = plus.iter().map(|p| theta.dot(*p)).fold(f64::INFINITY, f64::min);
    let hi = minus.iter().map(|p| theta.dot(*p)).fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationCertificate {
    pub feasible: bool,
    /// Unit maximum-margin direction `(α, β)`; zero when infeasible.
    pub theta_star: Point2,
    /// `m* = dist(C+, C−)` when feasible, else 0.
    pub margin: f64,
    pub closest_pair: (Point2, Point2),
    /// `M = max ‖Φ+ − Φ−‖` over positive–negative sample pairs.
    pub diameter: f64,
}

/// Exact closest pair of two convex hulls: `(distance, u ∈ a, v ∈ b)`.
pub fn hull_distance(a: &PlanarHull, b: &PlanarHull) -> (f64, Point2, Point2) {
    if let Some(&p) = b.vertices.iter().find(|&&p| a.contains(p)) {
        return (0.0, p, p);
    }
    if let Some(&p) = a.vertices.iter().find(|&&p| b.contains(p)) {
        return (0.0, p, p);
    }
    let mut best = (f64::INFINITY, a.vertices[0], b.vertices[0]);
    for &(p1, q1) in &a.edges() {
        for &(p2, q2) in &b.edges() {
            let cand = segment_closest(p1, q1, p2, q2);
            if cand.0 < best.0 {
                best = cand;
            }
        }
    }
    best
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn point_segment_closest(p: Point2, a: Point2, b: Point2) -> Point2 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return a;
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    a + ab.scale(t)
}

/// Closest points between segments `[p1, q1]` and `[p2, q2]`.
fn segment_closest(p1: Point2, q1: Point2, p2: Point2, q2: Point2) -> (f64, Point2, Point2) {
    let o1 = orient(p1, q1, p2);
    let o2 = orient(p1, q1, q2);
    let o3 = orient(p2, q2, p1);
    let o4 = orient(p2, q2, q1);
    let mut candidates = vec![
        (p1, point_segment_closest(p1, p2, q2)),
        (q1, point_segment_closest(q1, p2, q2)),
        (point_segment_closest(p2, p1, q1), p2),
        (point_segment_closest(q2, p1, q1), q2),
    ];
    // Orientation signs of nearly collinear segments are rounding noise, so
    // the crossing point is only one more candidate, measured like the rest.
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        let t = o3 / (o3 - o4);
        let x = p1 + (q1 - p1).scale(t);
        candidates.push((x, point_segment_closest(x, p2, q2)));
    }
    candidates
        .into_iter()
        .map(|(u, v)| ((u - v).norm(), u, v))
        .fold((f64::INFINITY, p1, p2), |best, c| if c.0 < best.0 { c } else { best })
}

/// Largest distance between a point of `a` and a point of `b`, scanning hull
/// vertices only.
pub fn cross_diameter(a: &PlanarHull, b: &PlanarHull) -> f64 {
    a.vertices
        .iter()
        .flat_map(|&p| b.vertices.iter().map(move |&q| (p - q).norm()))
        .fold(0.0, f64::max)
}

pub fn separation_certificate(plus: &[Point2], minus: &[Point2]) -> Result<SeparationCertificate> {
    if plus.is_empty() || minus.is_empty() {
        return Err(GeomError::EmptyClass);
    }
    let hp = convex_hull(plus)?;
    let hm = convex_hull(minus)?;
    let (dist, u, v) = hull_distance(&hp, &hm);
    let diameter = cross_diameter(&hp, &hm);
    let feasible = dist > SEPARATION_THRESHOLD;
    Ok(SeparationCertificate {
        feasible,
        theta_star: if feasible {
            (u - v).scale(1.0 / dist)
        } else {
            Point2::default()
        },
        margin: if feasible { dist } else { 0.0 },
        closest_pair: (u, v),
        diameter,
    })
}

/// `η` that centers the separated score interval `[h−, ℓ+]` on zero:
/// `η = (−(ℓ+ + h−)/2 − (1 − β) b) / B`.
pub fn centering_eta(l_plus: f64, h_minus: f64, beta: f64, b: f64, weight_sum: f64) -> Result<f64> {
    if weight_sum == 0.0 {
        return Err(GeomError::NoOffsetControl);
    }
    Ok((-(l_plus + h_minus) / 2.0 - (1.0 - beta) * b) / weight_sum)
}

/// Fixed-zero offset for a separating direction `θ = (α, β)`.
pub fn eta_for_zero_threshold(
    theta: Point2,
    plus: &[Point2],
    minus: &[Point2],
    b: f64,
    weight_sum: f64,
) -> Result<f64> {
    let margin = directional_margin(theta, plus, minus)?;
    if weight_sum == 0.0 {
        return Err(GeomError::NoOffsetControl);
    }
    if margin <= 0.0 {
        return Err(GeomError::NonSeparatingDirection(margin));
    }
    let (l, h) = projection_extremes(theta, plus, minus);
    centering_eta(l, h, theta.y, b, weight_sum)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationCheck {
    pub certified: bool,
    /// Lower bound `m* − M ‖θ̂ − θ̂*‖` on the margin at `θ̂`.
    pub margin_bound: f64,
    pub deviation: f64,
    /// Certified radius `m* / M`.
    pub radius: f64,
}

pub fn quantization_check(cert: &SeparationCertificate, theta_hat: Point2) -> Result<QuantizationCheck> {
    if !cert.feasible {
        return Err(GeomError::InfeasibleCertificate);
    }
    let deviation = (theta_hat - cert.theta_star).norm();
    let radius = cert.margin / cert.diameter;
    Ok(QuantizationCheck {
        certified: deviation < radius,
        margin_bound: cert.margin - cert.diameter * deviation,
        deviation,
        radius,
    })
}
