//! Homogeneous multiclass margin problems over pairwise lift rows.
//!
//! With `θ̄ = (α̃, β̃, η̃, λ)` and rows `z̄ = (ΔQ, ΔL, ΔB, Δb)` the hard problem
//! is `min ½‖θ̄‖²` subject to `θ̄·z̄ ≥ 1` and `λ ≥ 1`; coefficients are
//! recovered as `(α̃, β̃, η̃) / λ`. The soft problem replaces the row
//! constraints by the per-sample hinge `max(0, 1 − min_c θ̄·z̄)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::active_set::{min_norm, Outcome, Vec4};
use super::QpError;
use crate::cascade::QuadCoeffs;
use crate::lift::{homogeneous_margin, PairwiseLiftSet};

const LAMBDA_ROW: Vec4 = [0.0, 0.0, 0.0, 1.0];
const BATCH: usize = 32;
const WORKING_CAP: usize = 256;
const MAX_ROUNDS: usize = 200;
const HARD_TOL: f64 = 1e-10;
const SOFT_REL_TOL: f64 = 1e-10;
const MAX_CUTS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McStatus {
    Feasible,
    Infeasible,
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSolution {
    pub theta_bar: Vec4,
    pub coeffs: QuadCoeffs,
    pub status: McStatus,
    /// Per-sample hinge slacks (soft solves only).
    pub slacks: Vec<f64>,
    pub worst_margin: f64,
    /// Hard: the active rows at the optimum, or the conflicting rows when
    /// infeasible. Soft: rows attaining the per-sample minimum with `ξ > 0`.
    pub active_rows: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

impl McSolution {
    pub fn slack_sum(&self) -> f64 {
        self.slacks.iter().sum()
    }

    pub fn slack_count(&self) -> usize {
        self.slacks.iter().filter(|&&s| s > 0.0).count()
    }

    pub fn norm(&self) -> f64 {
        self.theta_bar.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn recover_coeffs(theta_bar: &Vec4) -> QuadCoeffs {
    let l = theta_bar[3];
    QuadCoeffs {
        alpha: theta_bar[0] / l,
        beta: theta_bar[1] / l,
        eta: theta_bar[2] / l,
    }
}

/// All homogeneous row margins; the result does not depend on the thread count.
pub fn row_margins(lifts: &PairwiseLiftSet, theta: &Vec4) -> Vec<f64> {
    lifts.rows.par_iter().map(|z| homogeneous_margin(theta, z)).collect()
}

/// Per-sample minimum margin and the first row attaining it.
fn sample_minima(lifts: &PairwiseLiftSet, margins: &[f64]) -> Vec<(f64, usize)> {
    (0..lifts.samples)
        .into_par_iter()
        .map(|i| {
            let range = lifts.sample_rows(i);
            let mut best = (f64::INFINITY, range.start);
            for r in range {
                if margins[r] < best.0 {
                    best = (margins[r], r);
                }
            }
            best
        })
        .collect()
}

/// Exact per-sample slacks `ξᵢ = max(0, 1 − min_c θ̄·z̄_{i,c})`.
pub fn sample_slacks(lifts: &PairwiseLiftSet, theta: &Vec4) -> Vec<f64> {
    let margins = row_margins(lifts, theta);
    sample_minima(lifts, &margins)
        .into_iter()
        .map(|(m, _)| (1.0 - m).max(0.0))
        .collect()
}

/// `½‖θ̄‖² + C Σᵢ ξᵢ(θ̄)`.
pub fn soft_objective(lifts: &PairwiseLiftSet, theta: &Vec4, c: f64) -> f64 {
    let norm_sq: f64 = theta.iter().map(|v| v * v).sum();
    0.5 * norm_sq + c * sample_slacks(lifts, theta).iter().sum::<f64>()
}

fn worst(margins: &[f64]) -> f64 {
    margins.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Hard-margin QP by cutting planes over the rows.
pub fn mc_hard(lifts: &PairwiseLiftSet) -> McSolution {
    let mut working: Vec<usize> = Vec::new();
    let mut theta: Vec4 = LAMBDA_ROW;
    let mut rounds = 0;
    loop {
        let margins = row_margins(lifts, &theta);
        let mut violated: Vec<usize> = (0..margins.len())
            .filter(|&r| margins[r] < 1.0 - HARD_TOL)
            .collect();
        if violated.is_empty() || rounds == MAX_ROUNDS {
            let status = if violated.is_empty() {
                McStatus::Feasible
            } else {
                McStatus::Infeasible
            };
            let active_rows = if violated.is_empty() {
                let mut a: Vec<usize> = working
                    .iter()
                    .copied()
                    .filter(|&r| margins[r] <= 1.0 + 1e-9)
                    .collect();
                a.sort_unstable();
                a
            } else {
                violated.truncate(BATCH);
                violated
            };
            return McSolution {
                theta_bar: theta,
                coeffs: recover_coeffs(&theta),
                status,
                slacks: Vec::new(),
                worst_margin: worst(&margins),
                active_rows,
                objective: 0.5 * theta.iter().map(|v| v * v).sum::<f64>(),
                iterations: rounds,
            };
        }
        rounds += 1;
        violated.sort_by(|&a, &b| margins[a].total_cmp(&margins[b]).then(a.cmp(&b)));
        violated.truncate(BATCH);
        if working.len() + violated.len() > WORKING_CAP {
            working.retain(|&r| margins[r] <= 1.0 + 1e-9);
        }
        working.extend(violated);

        let mut normals: Vec<Vec4> = vec![LAMBDA_ROW];
        normals.extend(working.iter().map(|&r| lifts.rows[r]));
        let rhs = vec![1.0; normals.len()];
        match min_norm(&normals, &rhs) {
            Outcome::Optimal { x, .. } => theta = x,
            Outcome::Infeasible { core } => {
                let active_rows: Vec<usize> = core.into_iter().filter(|&k| k > 0).map(|k| working[k - 1]).collect();
                let margins = row_margins(lifts, &theta);
                return McSolution {
                    theta_bar: theta,
                    coeffs: recover_coeffs(&theta),
                    status: McStatus::Infeasible,
                    slacks: Vec::new(),
                    worst_margin: worst(&margins),
                    active_rows,
                    objective: f64::INFINITY,
                    iterations: rounds,
                };
            }
        }
    }
}

/// A cut `s ≥ count − g·θ̄` of the summed hinge term, independent of `C`.
#[derive(Clone, Debug, PartialEq)]
struct Cut {
    g: Vec4,
    count: f64,
}

/// Soft-margin solver that keeps its cutting planes across penalties.
#[derive(Debug)]
pub struct SoftSolver<'a> {
    lifts: &'a PairwiseLiftSet,
    cuts: Vec<Cut>,
}

impl<'a> SoftSolver<'a> {
    pub fn new(lifts: &'a PairwiseLiftSet) -> Self {
        Self { lifts, cuts: Vec::new() }
    }

    /// Evaluates the hinge term at `θ̄` and returns `(Σξ, cut)`.
    fn oracle(&self, theta: &Vec4) -> (f64, Cut) {
        let margins = row_margins(self.lifts, theta);
        let minima = sample_minima(self.lifts, &margins);
        let mut g = [0.0; 4];
        let mut count = 0.0;
        let mut sum = 0.0;
        for &(m, r) in &minima {
            if m < 1.0 {
                sum += 1.0 - m;
                count += 1.0;
                for k in 0..4 {
                    g[k] += self.lifts.rows[r][k];
                }
            }
        }
        (sum, Cut { g, count })
    }

    /// `min ½‖θ̄‖²` subject to every cut at slack level `s` and `λ ≥ 1`.
    fn master_at(&self, s: f64) -> Option<Vec4> {
        let mut normals = vec![LAMBDA_ROW];
        let mut rhs = vec![1.0];
        for cut in &self.cuts {
            normals.push(cut.g);
            rhs.push(cut.count - s);
        }
        match min_norm(&normals, &rhs) {
            Outcome::Optimal { x, .. } => Some(x),
            Outcome::Infeasible { .. } => None,
        }
    }

    /// Minimizes the cutting-plane model `½‖θ̄‖² + C·s` by golden-section
    /// search over the shared slack level `s`.
    fn master(&self, c: f64, s_hi: f64) -> (Vec4, f64) {
        let eval = |s: f64| -> (f64, Vec4) {
            match self.master_at(s) {
                Some(x) => (0.5 * x.iter().map(|v| v * v).sum::<f64>() + c * s, x),
                None => (f64::INFINITY, [0.0; 4]),
            }
        };
        let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (0.0, s_hi);
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let mut f1 = eval(x1);
        let mut f2 = eval(x2);
        for _ in 0..200 {
            if hi - lo <= 1e-14 * s_hi.max(1.0) {
                break;
            }
            // infeasible levels sit below every feasible one
            if f1.0 <= f2.0 && f1.0.is_finite() {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = eval(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = eval(x2);
            }
        }
        let mut best = if f1.0 <= f2.0 { (f1, x1) } else { (f2, x2) };
        for s in [0.0, s_hi] {
            let cand = eval(s);
            if cand.0 < best.0 .0 {
                best = (cand, s);
            }
        }
        (best.0 .1, best.0 .0)
    }

    /// Soft-margin solve at penalty `c`, warm-started from earlier cuts.
    pub fn solve(&mut self, c: f64) -> Result<McSolution, QpError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(QpError::InvalidPenalty(c));
        }
        let mut best_theta: Vec4 = LAMBDA_ROW;
        let (sum0, cut0) = self.oracle(&best_theta);
        let mut best_f = 0.5 + c * sum0;
        if !self.cuts.contains(&cut0) && cut0.count > 0.0 {
            self.cuts.push(cut0);
        }
        // the optimum can never pay more slack than the λ-only point
        let s_hi = sum0 + 0.5 / c;
        let mut iterations = 0;
        while !self.cuts.is_empty() && iterations < MAX_CUTS {
            iterations += 1;
            let (theta, model) = self.master(c, s_hi);
            let (sum, cut) = self.oracle(&theta);
            let f = 0.5 * theta.iter().map(|v| v * v).sum::<f64>() + c * sum;
            if f < best_f {
                best_f = f;
                best_theta = theta;
            }
            if best_f - model <= SOFT_REL_TOL * best_f.abs().max(1.0) || self.cuts.contains(&cut) {
                break;
            }
            self.cuts.push(cut);
        }
        Ok(self.finish(best_theta, c, iterations))
    }

    fn finish(&self, theta: Vec4, c: f64, iterations: usize) -> McSolution {
        let margins = row_margins(self.lifts, &theta);
        let minima = sample_minima(self.lifts, &margins);
        let slacks: Vec<f64> = minima.iter().map(|&(m, _)| (1.0 - m).max(0.0)).collect();
        let active_rows = minima.iter().filter(|&&(m, _)| m < 1.0).map(|&(_, r)| r).collect();
        let norm_sq: f64 = theta.iter().map(|v| v * v).sum();
        McSolution {
            theta_bar: theta,
            coeffs: recover_coeffs(&theta),
            status: McStatus::Soft,
            objective: 0.5 * norm_sq + c * slacks.iter().sum::<f64>(),
            slacks,
            worst_margin: worst(&margins),
            active_rows,
            iterations,
        }
    }
}

/// Cold-started soft-margin solve.
pub fn mc_soft(lifts: &PairwiseLiftSet, c: f64) -> Result<McSolution, QpError> {
    SoftSolver::new(lifts).solve(c)
}
