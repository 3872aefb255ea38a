//! Closest points of two reduced convex hulls in the plane.
//!
//! The dual problem `min ‖Σλᵢzᵢ⁺ − Σκⱼzⱼ⁻‖²` over two capped simplices is
//! solved by maximal-violating-pair steps with exact line search. The
//! Frank–Wolfe gap from the greedy capped-simplex oracle is the stopping
//! certificate.

use serde::{Deserialize, Serialize};

use super::QpError;
use crate::geom2d::{Point2, SEPARATION_THRESHOLD};

const GAP_TOL: f64 = 1e-13;
const GAP_CHECK_EVERY: usize = 16;
const RESYNC_EVERY: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RchSolution {
    pub lambda: Vec<f64>,
    pub kappa: Vec<f64>,
    pub u_star: Point2,
    pub v_star: Point2,
    pub distance: f64,
    /// Unit vector along `u* − v*`; zero when the reduced hulls meet.
    pub theta: Point2,
    /// `θ · (u* + v*) / 2` for the unit `θ`.
    pub threshold: f64,
    /// Half the distance: the margin of each side to the threshold.
    pub rho: f64,
    /// Frank–Wolfe duality gap of `‖u − v‖²` at the returned weights.
    pub gap: f64,
    pub iterations: usize,
    /// Reduced-hull margin of `theta`, recomputed from the raw points.
    pub reduced_margin: f64,
    pub mu_plus: f64,
    pub mu_minus: f64,
}

impl RchSolution {
    pub fn separates(&self) -> bool {
        self.distance > SEPARATION_THRESHOLD && self.reduced_margin > SEPARATION_THRESHOLD
    }
}

fn check_cap(mu: f64, n: usize) -> Result<(), QpError> {
    if !(mu <= 1.0 && mu * n as f64 >= 1.0 - 1e-12) {
        return Err(QpError::InvalidCap { mu, n });
    }
    Ok(())
}

/// Indices ordered by key, ties by index.
fn sorted_by_key(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    idx
}

/// `min Σ sᵢ keyᵢ` over `{Σs = 1, 0 ≤ s ≤ μ}`: fill the smallest keys first.
pub fn capped_simplex_min(keys: &[f64], mu: f64) -> f64 {
    let mut left = 1.0;
    let mut total = 0.0;
    for i in sorted_by_key(keys) {
        if left <= 0.0 {
            break;
        }
        let w = mu.min(left);
        total += w * keys[i];
        left -= w;
    }
    total
}

/// `min_{RCH_μ+(S+)} θ·z − max_{RCH_μ−(S−)} θ·z`.
pub fn reduced_margin(theta: Point2, plus: &[Point2], mu_plus: f64, minus: &[Point2], mu_minus: f64) -> f64 {
    let kp: Vec<f64> = plus.iter().map(|p| theta.dot(*p)).collect();
    let km: Vec<f64> = minus.iter().map(|p| -theta.dot(*p)).collect();
    capped_simplex_min(&kp, mu_plus) + capped_simplex_min(&km, mu_minus)
}

fn combine(points: &[Point2], w: &[f64]) -> Point2 {
    points
        .iter()
        .zip(w)
        .fold(Point2::default(), |acc, (p, &wi)| acc + p.scale(wi))
}

/// One side of the pairwise step: the coordinate to shrink (largest key with
/// weight left) and the one to grow (smallest key with room under the cap).
fn violating_pair(keys: &[f64], w: &[f64], mu: f64) -> Option<(usize, usize)> {
    let mut away: Option<usize> = None;
    let mut toward: Option<usize> = None;
    for i in 0..keys.len() {
        if w[i] > 0.0 && away.map_or(true, |a| keys[i] > keys[a]) {
            away = Some(i);
        }
        if w[i] < mu && toward.map_or(true, |t| keys[i] < keys[t]) {
            toward = Some(i);
        }
    }
    match (away, toward) {
        (Some(a), Some(t)) if a != t && keys[a] > keys[t] => Some((a, t)),
        _ => None,
    }
}

struct Side<'a> {
    pts: &'a [Point2],
    w: Vec<f64>,
    mu: f64,
    /// `+1` for the positive hull, `−1` for the negative one.
    sign: f64,
}

impl Side<'_> {
    fn keys(&self, diff: Point2) -> Vec<f64> {
        self.pts.iter().map(|p| self.sign * p.dot(diff)).collect()
    }

    fn fw_gap(&self, keys: &[f64]) -> f64 {
        let cur: f64 = keys.iter().zip(&self.w).map(|(k, w)| k * w).sum();
        cur - capped_simplex_min(keys, self.mu)
    }

    /// Best step moving weight from `a` to `t`: `(δ, decrease, Δdiff)`.
    fn step(&self, diff: Point2, a: usize, t: usize) -> (f64, f64, Point2) {
        let dir = (self.pts[t] - self.pts[a]).scale(self.sign);
        let dd = dir.norm_sq();
        if dd == 0.0 {
            let delta = self.w[a].min(self.mu - self.w[t]);
            return (delta, 0.0, dir);
        }
        let delta = (-diff.dot(dir) / dd).clamp(0.0, self.w[a].min(self.mu - self.w[t]));
        let decrease = -(2.0 * delta * diff.dot(dir) + delta * delta * dd);
        (delta, decrease, dir)
    }

    fn apply(&mut self, a: usize, t: usize, delta: f64) {
        if delta >= self.w[a] {
            self.w[t] += self.w[a];
            self.w[a] = 0.0;
        } else if delta >= self.mu - self.w[t] {
            self.w[a] -= self.mu - self.w[t];
            self.w[t] = self.mu;
        } else {
            self.w[a] -= delta;
            self.w[t] += delta;
        }
    }
}

/// Closest points of `RCH_μ+(S+)` and `RCH_μ−(S−)`.
pub fn rch_closest_point(
    plus: &[Point2],
    minus: &[Point2],
    mu_plus: f64,
    mu_minus: f64,
) -> Result<RchSolution, QpError> {
    if plus.is_empty() || minus.is_empty() {
        return Err(QpError::EmptyClass);
    }
    if plus.iter().chain(minus).any(|p| !p.is_finite()) {
        return Err(QpError::NonFinite);
    }
    check_cap(mu_plus, plus.len())?;
    check_cap(mu_minus, minus.len())?;
    let mu_plus = mu_plus.max(1.0 / plus.len() as f64);
    let mu_minus = mu_minus.max(1.0 / minus.len() as f64);

    // center and rescale so tolerances are scale-free
    let all = plus.iter().chain(minus);
    let count = (plus.len() + minus.len()) as f64;
    let center = all.clone().fold(Point2::default(), |a, p| a + *p).scale(1.0 / count);
    let spread = all
        .map(|p| (p.x - center.x).abs().max((p.y - center.y).abs()))
        .fold(0.0, f64::max);
    let scale = if spread > 0.0 { spread } else { 1.0 };
    let norm = |p: &Point2| (*p - center).scale(1.0 / scale);
    let np: Vec<Point2> = plus.iter().map(norm).collect();
    let nm: Vec<Point2> = minus.iter().map(norm).collect();

    let mut sp = Side {
        pts: &np,
        w: vec![1.0 / np.len() as f64; np.len()],
        mu: mu_plus,
        sign: 1.0,
    };
    let mut sm = Side {
        pts: &nm,
        w: vec![1.0 / nm.len() as f64; nm.len()],
        mu: mu_minus,
        sign: -1.0,
    };
    let max_iter = 200_000 + 100 * (np.len() + nm.len());
    let mut diff = combine(sp.pts, &sp.w) - combine(sm.pts, &sm.w);
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        if iterations % RESYNC_EVERY == 0 {
            diff = combine(sp.pts, &sp.w) - combine(sm.pts, &sm.w);
        }
        let kp = sp.keys(diff);
        let km = sm.keys(diff);
        if iterations % GAP_CHECK_EVERY == 0 {
            gap = 2.0 * (sp.fw_gap(&kp) + sm.fw_gap(&km));
            if gap <= GAP_TOL {
                break;
            }
        }
        let cand_p = violating_pair(&kp, &sp.w, sp.mu).map(|(a, t)| (a, t, sp.step(diff, a, t)));
        let cand_m = violating_pair(&km, &sm.w, sm.mu).map(|(a, t)| (a, t, sm.step(diff, a, t)));
        let dec_p = cand_p.map_or(0.0, |c| c.2 .1);
        let dec_m = cand_m.map_or(0.0, |c| c.2 .1);
        if dec_p <= 0.0 && dec_m <= 0.0 {
            break;
        }
        if dec_p >= dec_m {
            let (a, t, (delta, _, dir)) = cand_p.unwrap();
            sp.apply(a, t, delta);
            diff = diff + dir.scale(delta);
        } else {
            let (a, t, (delta, _, dir)) = cand_m.unwrap();
            sm.apply(a, t, delta);
            diff = diff + dir.scale(delta);
        }
        iterations += 1;
    }

    diff = combine(sp.pts, &sp.w) - combine(sm.pts, &sm.w);
    gap = gap.min(2.0 * (sp.fw_gap(&sp.keys(diff)) + sm.fw_gap(&sm.keys(diff))));
    let lambda = sp.w;
    let kappa = sm.w;
    let u_star = combine(plus, &lambda);
    let v_star = combine(minus, &kappa);
    let distance = (u_star - v_star).norm();
    let theta = if distance > 0.0 {
        (u_star - v_star).scale(1.0 / distance)
    } else {
        Point2::default()
    };
    let reduced_margin = if distance > 0.0 {
        reduced_margin(theta, plus, mu_plus, minus, mu_minus)
    } else {
        0.0
    };
    Ok(RchSolution {
        lambda,
        kappa,
        u_star,
        v_star,
        distance,
        theta,
        threshold: theta.dot(u_star + v_star) / 2.0,
        rho: distance / 2.0,
        gap: gap.max(0.0) * scale * scale,
        iterations,
        reduced_margin,
        mu_plus,
        mu_minus,
    })
}

/// Primal `(θ, t, ρ)` with `θ = u* − v*`, `t = θ·(u* + v*)/2` and
/// `ρ = θ·u* − t`.
pub fn primal_from_dual(sol: &RchSolution) -> Result<(Point2, f64, f64), QpError> {
    if sol.distance <= 0.0 {
        return Err(QpError::DegenerateContact);
    }
    let theta = sol.u_star - sol.v_star;
    let t = theta.dot(sol.u_star + sol.v_star) / 2.0;
    Ok((theta, t, theta.dot(sol.u_star) - t))
}

/// Objective of the ν-SVM-type primal at `(θ, t, ρ)` with the slacks set to
/// their optimal values for that point.
pub fn prch_objective(
    theta: Point2,
    t: f64,
    rho: f64,
    plus: &[Point2],
    minus: &[Point2],
    c_plus: f64,
    c_minus: f64,
) -> f64 {
    let sp: f64 = plus.iter().map(|p| (rho - (theta.dot(*p) - t)).max(0.0)).sum();
    let sm: f64 = minus.iter().map(|p| (rho - (t - theta.dot(*p))).max(0.0)).sum();
    0.5 * theta.norm_sq() - rho + c_plus * sp + c_minus * sm
}
