//! Fixtures shared by the integration tests: seeded random models, a
//! plain-loop forward pass that does not go through the library, and planar
//! two-class instances.

#![allow(dead_code)]

use quadrelu::geom2d::Point2;
use quadrelu::model_io::{HiddenLayer, MlpModel, ModelKind};
use quadrelu::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Weights kept as nested vectors so the oracle forward pass owns its data.
#[derive(Clone, Debug)]
pub struct RawMlp {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

impl RawMlp {
    pub fn random(rng: &mut ChaCha8Rng, d: usize, m: usize, outputs: usize, hidden_shift: f64) -> Self {
        let scale = 1.0 / (d as f64).sqrt();
        let w = (0..m).map(|_| (0..d).map(|_| rng.gen_range(-scale..scale)).collect()).collect();
        let b = (0..m).map(|_| rng.gen_range(-0.3..0.3) + hidden_shift).collect();
        let a: Vec<Vec<f64>> = (0..outputs).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        // cancel the shift's contribution so every class still occurs
        let c = a
            .iter()
            .map(|row| rng.gen_range(-0.2..0.2) - hidden_shift * row.iter().sum::<f64>())
            .collect();
        Self { w, b, a, c }
    }

    pub fn model(&self) -> MlpModel {
        let kind = if self.a.len() == 1 { ModelKind::Binary } else { ModelKind::Multiclass };
        MlpModel::new(
            kind,
            Some(HiddenLayer {
                weights: Matrix::from_rows(&self.w).unwrap(),
                bias: self.b.clone(),
            }),
            Matrix::from_rows(&self.a).unwrap(),
            self.c.clone(),
        )
        .unwrap()
    }

    pub fn scores(&self, x: &[f64], act: impl Fn(f64) -> f64) -> Vec<f64> {
        let h: Vec<f64> = self
            .w
            .iter()
            .zip(&self.b)
            .map(|(row, bj)| act(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bj))
            .collect();
        self.a
            .iter()
            .zip(&self.c)
            .map(|(row, ck)| row.iter().zip(&h).map(|(a, v)| a * v).sum::<f64>() + ck)
            .collect()
    }

    pub fn decision(&self, x: &[f64], act: impl Fn(f64) -> f64, threshold: f64) -> usize {
        let s = self.scores(x, act);
        if s.len() == 1 {
            return usize::from(s[0] > threshold);
        }
        let mut best = 0;
        for k in 1..s.len() {
            if s[k] > s[best] {
                best = k;
            }
        }
        best
    }

    pub fn relu_decisions(&self, x: &Matrix) -> Vec<usize> {
        x.iter_rows().map(|r| self.decision(r, |u| u.max(0.0), 0.0)).collect()
    }
}

pub fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let data = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Matrix::from_flat(n, d, data)
}

#[derive(Clone, Debug)]
pub struct PlanarInstance {
    pub plus: Vec<Point2>,
    pub minus: Vec<Point2>,
}

fn unit(rng: &mut ChaCha8Rng) -> Point2 {
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    Point2::new(a.cos(), a.sin())
}

fn boxed(rng: &mut ChaCha8Rng) -> Point2 {
    Point2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// Clouds on either side of a slab of width `gap` around a random line.
pub fn separable(rng: &mut ChaCha8Rng, np: usize, nm: usize, gap: f64) -> PlanarInstance {
    let w = unit(rng);
    let push = |x: Point2, side: f64| {
        let s = w.dot(x);
        x + w.scale(side * (gap / 2.0 + s.abs()) - s)
    };
    PlanarInstance {
        plus: (0..np).map(|_| push(boxed(rng), 1.0)).collect(),
        minus: (0..nm).map(|_| push(boxed(rng), -1.0)).collect(),
    }
}

/// Two clouds whose hulls are forced to meet: one negative point is a
/// convex combination of positive points.
pub fn overlapping(rng: &mut ChaCha8Rng, np: usize, nm: usize) -> PlanarInstance {
    let centre = boxed(rng).scale(0.3);
    let plus: Vec<Point2> = (0..np).map(|_| centre + boxed(rng)).collect();
    let mut minus: Vec<Point2> = (0..nm.saturating_sub(1)).map(|_| centre + boxed(rng).scale(1.5)).collect();
    let i = rng.gen_range(0..np);
    let j = rng.gen_range(0..np);
    let t: f64 = rng.gen();
    minus.push(plus[i].scale(t) + plus[j].scale(1.0 - t));
    PlanarInstance { plus, minus }
}

/// Both classes on one line, separated or interleaved.
pub fn collinear(rng: &mut ChaCha8Rng, np: usize, nm: usize, separated: bool) -> PlanarInstance {
    let base = boxed(rng).scale(0.5);
    let dir = unit(rng);
    let at = |t: f64| base + dir.scale(t);
    let plus: Vec<f64> = (0..np).map(|_| rng.gen_range(0.1..1.0)).collect();
    let mut minus: Vec<f64> = if separated {
        (0..nm).map(|_| rng.gen_range(-1.0..-0.1)).collect()
    } else {
        (0..nm).map(|_| rng.gen_range(-1.0..0.5)).collect()
    };
    if !separated {
        // exact grid value so the point lies inside the positive range
        let lo = plus.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        minus[0] = (lo + hi) / 2.0;
    }
    PlanarInstance {
        plus: plus.into_iter().map(at).collect(),
        minus: minus.into_iter().map(at).collect(),
    }
}

/// Clouds around two random centres; separability is left to chance.
pub fn free_clouds(rng: &mut ChaCha8Rng, np: usize, nm: usize) -> PlanarInstance {
    let cp = boxed(rng).scale(1.5);
    let cm = boxed(rng).scale(1.5);
    let sp = rng.gen_range(0.2..1.0);
    let sm = rng.gen_range(0.2..1.0);
    let mut plus: Vec<Point2> = (0..np).map(|_| cp + boxed(rng).scale(sp)).collect();
    let mut minus: Vec<Point2> = (0..nm).map(|_| cm + boxed(rng).scale(sm)).collect();
    // a few exact duplicates
    if np > 2 {
        plus[1] = plus[0];
    }
    if nm > 2 {
        minus[nm - 1] = minus[0];
    }
    PlanarInstance { plus, minus }
}

/// Best margin over every candidate axis that can carry the closest pair
/// of two planar hulls: normals of all same-class point pairs and all
/// cross-class differences. Equals the hull distance when positive.
pub fn axis_oracle(plus: &[Point2], minus: &[Point2]) -> f64 {
    let margin = |ax: Point2| -> f64 {
        let n = ax.norm();
        if n == 0.0 {
            return f64::NEG_INFINITY;
        }
        let lo = plus.iter().map(|p| ax.dot(*p)).fold(f64::INFINITY, f64::min);
        let hi = minus.iter().map(|p| ax.dot(*p)).fold(f64::NEG_INFINITY, f64::max);
        (lo - hi) / n
    };
    let mut best = f64::NEG_INFINITY;
    for cloud in [plus, minus] {
        for i in 0..cloud.len() {
            for j in i + 1..cloud.len() {
                let e = cloud[j] - cloud[i];
                let perp = Point2::new(-e.y, e.x);
                best = best.max(margin(perp)).max(margin(perp.scale(-1.0)));
            }
        }
    }
    for p in plus {
        for q in minus {
            best = best.max(margin(*p - *q));
        }
    }
    best
}

/// Largest directional margin over `count` equally spaced unit directions.
pub fn grid_best(plus: &[Point2], minus: &[Point2], count: usize) -> (f64, Point2) {
    let mut best = (f64::NEG_INFINITY, Point2::default());
    for k in 0..count {
        let a = std::f64::consts::TAU * k as f64 / count as f64;
        let th = Point2::new(a.cos(), a.sin());
        let lo = plus.iter().map(|p| th.dot(*p)).fold(f64::INFINITY, f64::min);
        let hi = minus.iter().map(|p| th.dot(*p)).fold(f64::NEG_INFINITY, f64::max);
        if lo - hi > best.0 {
            best = (lo - hi, th);
        }
    }
    best
}

/// Brute-force `max ‖p − q‖` over all cross-class pairs.
pub fn brute_diameter(plus: &[Point2], minus: &[Point2]) -> f64 {
    plus.iter()
        .flat_map(|p| minus.iter().map(move |q| (*p - *q).norm()))
        .fold(0.0, f64::max)
}
