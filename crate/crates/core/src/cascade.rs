//! Coefficient construction: hard → reduced hull → soft.
//!
//! Binary fits test exact separability of the planar lift first, then scan
//! reduced-hull caps, then fall back to the closest reduced hulls with the
//! best calibration agreement. Multiclass fits solve the hard homogeneous
//! QP and fall back to the soft-margin QP over a penalty grid. Every fit is
//! rechecked through the polynomialized forward pass before it is reported.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{evaluate, forward_poly, percentage, shifted_decisions, EvalError};
use crate::geom2d::{
    centering_eta, directional_margin, projection_extremes, quantization_check, separation_certificate, GeomError,
    Point2, QuantizationCheck, SeparationCertificate,
};
use crate::lift::{binary_lift, class_stats, pairwise_lifts, BinaryLiftCloud, PairwiseLiftSet};
use crate::matrix::Matrix;
use crate::model_io::{relu_decisions, CalibrationSet, MlpModel, ModelError, ModelKind};
use crate::qpsolvers::{mc_hard, rch_closest_point, McStatus, QpError, RchSolution, SoftSolver};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_MU_GRID: [f64; 12] = [0.80, 0.60, 0.40, 0.30, 0.20, 0.15, 0.10, 0.08, 0.05, 0.03, 0.02, 0.01];
pub const DEFAULT_C_GRID: [f64; 6] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];

/// Coefficients of the shared quadratic `q(u) = αu² + βu + η`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadCoeffs {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
}

impl QuadCoeffs {
    pub fn apply(&self, u: f64) -> f64 {
        self.alpha * u * u + self.beta * u + self.eta
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite() && self.eta.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regime {
    Hard,
    Rch { mu: f64 },
    Soft { c: f64 },
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Hard => write!(f, "hard"),
            Regime::Rch { mu } => write!(f, "rch({mu})"),
            Regime::Soft { c } => write!(f, "soft({c})"),
        }
    }
}

/// Where the binary decision boundary sits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// `η` re-centers scores so the boundary is exactly 0.
    #[default]
    FixedZero,
    /// `η = 0` and a separate threshold is reported.
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeOptions {
    /// Base caps, scanned in the given (descending) order.
    pub mu_grid: Vec<f64>,
    /// Soft-margin penalties, solved in the given (ascending) order.
    pub c_grid: Vec<f64>,
    pub threshold_mode: ThresholdMode,
    /// Share of each class held out for cap tie-breaks.
    pub validation_fraction: f64,
    pub seed: u64,
    /// Grid step for rounding a binary hard-regime direction.
    pub quantize_step: Option<f64>,
    /// Start the binary cascade at the reduced-hull scan (diagnostics only).
    pub skip_hard: bool,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        Self {
            mu_grid: DEFAULT_MU_GRID.to_vec(),
            c_grid: DEFAULT_C_GRID.to_vec(),
            threshold_mode: ThresholdMode::FixedZero,
            validation_fraction: 0.2,
            seed: 2026,
            quantize_step: None,
            skip_hard: false,
        }
    }
}

impl CascadeOptions {
    fn validate(&self) -> Result<()> {
        if self.mu_grid.iter().any(|&m| !(m > 0.0 && m <= 1.0)) {
            return Err(CascadeError::InvalidOptions("μ grid values must lie in (0, 1]".into()));
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(CascadeError::InvalidOptions("C grid must hold positive finite values".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(CascadeError::InvalidOptions("validation fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("calibration targets contain a single class")]
    SingleClassCalibration,
    #[error("quantization needs a binary hard-regime fit")]
    NotHardRegime,
    #[error("quantization step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

pub type Result<T> = std::result::Result<T, CascadeError>;

/// One evaluated grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// `mu` (reduced-hull scan), `mu_soft` (binary fallback) or `c`.
    pub parameter: String,
    pub value: f64,
    pub mu_plus: Option<f64>,
    pub mu_minus: Option<f64>,
    /// Reduced hulls separate (binary) / solver converged (multiclass soft).
    pub feasible: bool,
    pub distance: Option<f64>,
    pub normalized_margin: f64,
    pub cal_agreement: f64,
    pub val_agreement: Option<f64>,
    pub slack_sum: Option<f64>,
    pub slack_count: Option<usize>,
    pub worst_margin: Option<f64>,
    pub theta_norm: Option<f64>,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestDiagnostics {
    pub n: usize,
    pub agreement: f64,
    pub mismatches: usize,
    pub mismatch_indices: Vec<usize>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationReport {
    pub step: f64,
    pub theta_hat: Point2,
    /// Absent when the rounded direction is zero.
    pub check: Option<QuantizationCheck>,
    pub certified: bool,
    /// Directional margin of the rounded direction on the full lift.
    pub empirical_margin: f64,
    pub mismatches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub regime: Regime,
    pub coeffs: QuadCoeffs,
    pub threshold_mode: ThresholdMode,
    /// Binary boundary on the replaced score (0 under fixed-zero).
    pub threshold: f64,
    pub exact: bool,
    pub n_c: usize,
    pub pair_count: Option<usize>,
    pub cal_agreement: f64,
    pub cal_mismatches: usize,
    pub cal_mismatch_indices: Vec<usize>,
    pub test: Option<TestDiagnostics>,
    pub normalized_margin: f64,
    pub slack_count: Option<usize>,
    pub slack_sum: Option<f64>,
    pub worst_margin: Option<f64>,
    /// Homogeneous multiclass solution `(α̃, β̃, η̃, λ)`.
    pub homogeneous: Option<[f64; 4]>,
    pub certificate: Option<SeparationCertificate>,
    pub quantization: Option<QuantizationReport>,
    pub selection_trace: Vec<TraceEntry>,
}

impl FitReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Decisions of the polynomialized model (binary: `score > threshold`).
pub fn deployed_decisions(model: &MlpModel, coeffs: &QuadCoeffs, threshold: f64, x: &Matrix) -> Result<Vec<usize>> {
    let logits = forward_poly(model, coeffs, x)?;
    Ok(shifted_decisions(&logits, threshold))
}

/// Deterministic stratified hold-out: per class, shuffle with the seed and
/// keep the first `round(fraction · n_class)` indices.
pub fn stratified_split(targets: &[usize], fraction: f64, seed: u64) -> Vec<usize> {
    let classes = targets.iter().copied().max().map_or(0, |c| c + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] == c).collect();
        idx.shuffle(&mut rng);
        let take = (fraction * idx.len() as f64).round() as usize;
        out.extend_from_slice(&idx[..take.min(idx.len())]);
    }
    out.sort_unstable();
    out
}

/// Positive `γ` with `γ(ℓ − βb) + b > 0 > γ(h − βb) + b`, used when `B = 0`
/// leaves `η` without effect and only the scale of `(α, β)` can move the
/// boundary.
fn zero_threshold_scale(l: f64, h: f64, beta: f64, b: f64) -> Option<f64> {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    // γ·a > −b
    let a = l - beta * b;
    if a > 0.0 {
        lo = lo.max(-b / a);
    } else if a < 0.0 {
        hi = hi.min(-b / a);
    } else if b <= 0.0 {
        return None;
    }
    // γ·c < −b
    let c = h - beta * b;
    if c > 0.0 {
        hi = hi.min(-b / c);
    } else if c < 0.0 {
        lo = lo.max(-b / c);
    } else if b >= 0.0 {
        return None;
    }
    if !(lo < hi) {
        return None;
    }
    Some(if hi.is_finite() {
        (lo + hi) / 2.0
    } else if lo > 0.0 {
        2.0 * lo
    } else {
        1.0
    })
}

/// Coefficients and threshold for direction `θ` when the positive scores
/// start at `l` and the negative ones end at `h` (projections of the lift).
fn binary_coeffs(theta: Point2, l: f64, h: f64, cloud: &BinaryLiftCloud, mode: ThresholdMode) -> Option<(QuadCoeffs, f64)> {
    let b = cloud.head_bias;
    match mode {
        ThresholdMode::Free => Some((
            QuadCoeffs {
                alpha: theta.x,
                beta: theta.y,
                eta: 0.0,
            },
            (l + h) / 2.0 + (1.0 - theta.y) * b,
        )),
        ThresholdMode::FixedZero => {
            if cloud.weight_sum != 0.0 {
                let eta = centering_eta(l, h, theta.y, b, cloud.weight_sum).ok()?;
                Some((
                    QuadCoeffs {
                        alpha: theta.x,
                        beta: theta.y,
                        eta,
                    },
                    0.0,
                ))
            } else {
                let g = zero_threshold_scale(l, h, theta.y, b)?;
                Some((
                    QuadCoeffs {
                        alpha: g * theta.x,
                        beta: g * theta.y,
                        eta: 0.0,
                    },
                    0.0,
                ))
            }
        }
    }
}

fn plain_coeffs(theta: Point2) -> (QuadCoeffs, f64) {
    (
        QuadCoeffs {
            alpha: theta.x,
            beta: theta.y,
            eta: 0.0,
        },
        0.0,
    )
}

fn check_two_classes(targets: &[usize]) -> Result<()> {
    match targets.first() {
        Some(&t0) if targets.iter().any(|&t| t != t0) => Ok(()),
        _ => Err(CascadeError::SingleClassCalibration),
    }
}

struct Agreement {
    pct: f64,
    mismatches: Vec<usize>,
}

fn agreement_on(targets: &[usize], decisions: &[usize], subset: Option<&[usize]>) -> Agreement {
    match subset {
        None => {
            let mismatches: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] != decisions[i]).collect();
            Agreement {
                pct: percentage(targets.len() - mismatches.len(), targets.len()),
                mismatches,
            }
        }
        Some(idx) => {
            let mismatches: Vec<usize> = idx.iter().copied().filter(|&i| targets[i] != decisions[i]).collect();
            Agreement {
                pct: percentage(idx.len() - mismatches.len(), idx.len()),
                mismatches,
            }
        }
    }
}

fn base_report(kind: ModelKind, regime: Regime, coeffs: QuadCoeffs, threshold: f64, opts: &CascadeOptions, n: usize, agr: Agreement) -> FitReport {
    FitReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind,
        regime,
        coeffs,
        threshold_mode: opts.threshold_mode,
        threshold,
        exact: false,
        n_c: n,
        pair_count: None,
        cal_agreement: agr.pct,
        cal_mismatches: agr.mismatches.len(),
        cal_mismatch_indices: agr.mismatches,
        test: None,
        normalized_margin: 0.0,
        slack_count: None,
        slack_sum: None,
        worst_margin: None,
        homogeneous: None,
        certificate: None,
        quantization: None,
        selection_trace: Vec::new(),
    }
}

/// Signed soft margins `y_i(θ·z_i − t)` relative to `ρ`: returns `(Σξ, count, min margin)`.
fn binary_slacks(sol: &RchSolution, plus: &[Point2], minus: &[Point2]) -> (f64, usize, f64) {
    let mut sum = 0.0;
    let mut count = 0;
    let mut worst = f64::INFINITY;
    let margins = plus
        .iter()
        .map(|p| sol.theta.dot(*p) - sol.threshold)
        .chain(minus.iter().map(|p| sol.threshold - sol.theta.dot(*p)));
    for m in margins {
        let xi = (sol.rho - m).max(0.0);
        if xi > 0.0 {
            sum += xi;
            count += 1;
        }
        worst = worst.min(m);
    }
    (sum, count, worst)
}

struct BinaryCandidate {
    index: usize,
    cap_sum: f64,
    coeffs: QuadCoeffs,
    threshold: f64,
    cal: Agreement,
    val: f64,
    margin: f64,
    slack: (f64, usize, f64),
    sol: RchSolution,
}

/// Binary cascade on an already-computed calibration set.
pub fn fit_binary(model: &MlpModel, cal: &CalibrationSet, opts: &CascadeOptions) -> Result<FitReport> {
    opts.validate()?;
    if model.kind() != ModelKind::Binary {
        return Err(ModelError::KindMismatch { expected: "binary" }.into());
    }
    check_two_classes(&cal.targets)?;
    let preacts = model.preactivations(&cal.features)?;
    let cloud = binary_lift(model, &preacts, &cal.targets)?;
    let plus = cloud.positives();
    let minus = cloud.negatives();
    let targets = &cal.targets;
    let n = targets.len();
    let decide = |coeffs: &QuadCoeffs, thr: f64| deployed_decisions(model, coeffs, thr, &cal.features);

    // hard
    let cert = separation_certificate(&plus, &minus)?;
    if cert.feasible && !opts.skip_hard {
        let theta = cert.theta_star;
        let (l, h) = projection_extremes(theta, &plus, &minus);
        if let Some((coeffs, thr)) = binary_coeffs(theta, l, h, &cloud, opts.threshold_mode) {
            let agr = agreement_on(targets, &decide(&coeffs, thr)?, None);
            if agr.mismatches.is_empty() {
                let mut rep = base_report(ModelKind::Binary, Regime::Hard, coeffs, thr, opts, n, agr);
                rep.exact = true;
                rep.normalized_margin = directional_margin(theta, &plus, &minus)?;
                rep.certificate = Some(cert);
                if let Some(step) = opts.quantize_step {
                    return quantize_and_certify(&rep, model, cal, step);
                }
                return Ok(rep);
            }
        }
    }

    let val_idx = stratified_split(targets, opts.validation_fraction, opts.seed);
    let np = plus.len() as f64;
    let nm = minus.len() as f64;
    let caps = |mu: f64| (mu.max(1.0 / np).min(1.0), mu.max(1.0 / nm).min(1.0));

    let evaluate_cap = |index: usize, mu: f64| -> Result<(TraceEntry, Option<BinaryCandidate>)> {
        let (mp, mm) = caps(mu);
        let sol = rch_closest_point(&plus, &minus, mp, mm)?;
        let mut entry = TraceEntry {
            parameter: String::new(),
            value: mu,
            mu_plus: Some(mp),
            mu_minus: Some(mm),
            feasible: sol.separates(),
            distance: Some(sol.distance),
            normalized_margin: sol.reduced_margin,
            cal_agreement: 0.0,
            val_agreement: None,
            slack_sum: None,
            slack_count: None,
            worst_margin: None,
            theta_norm: None,
            selected: false,
        };
        if sol.distance <= crate::geom2d::SEPARATION_THRESHOLD {
            return Ok((entry, None));
        }
        let l = sol.theta.dot(sol.u_star);
        let h = sol.theta.dot(sol.v_star);
        let (coeffs, thr) = binary_coeffs(sol.theta, l, h, &cloud, opts.threshold_mode).unwrap_or_else(|| plain_coeffs(sol.theta));
        let dec = decide(&coeffs, thr)?;
        let cal_agr = agreement_on(targets, &dec, None);
        let val = agreement_on(targets, &dec, Some(&val_idx)).pct;
        let slack = binary_slacks(&sol, &plus, &minus);
        entry.cal_agreement = cal_agr.pct;
        entry.val_agreement = Some(val);
        entry.slack_sum = Some(slack.0);
        entry.slack_count = Some(slack.1);
        entry.worst_margin = Some(slack.2);
        Ok((
            entry,
            Some(BinaryCandidate {
                index,
                cap_sum: mp + mm,
                coeffs,
                threshold: thr,
                cal: cal_agr,
                val,
                margin: sol.reduced_margin,
                slack,
                sol,
            }),
        ))
    };

    // reduced-hull scan
    let scanned: Vec<(TraceEntry, Option<BinaryCandidate>)> = opts
        .mu_grid
        .par_iter()
        .enumerate()
        .map(|(i, &mu)| evaluate_cap(i, mu))
        .collect::<Result<_>>()?;
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut best: Option<&BinaryCandidate> = None;
    for (_, cand) in &scanned {
        let Some(c) = cand else { continue };
        if !c.sol.separates() {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => c
                .cap_sum
                .total_cmp(&b.cap_sum)
                .then(c.val.total_cmp(&b.val))
                .then(c.margin.total_cmp(&b.margin))
                .then(b.index.cmp(&c.index))
                .is_gt(),
        };
        if better {
            best = Some(c);
        }
    }
    let chosen_rch = best.map(|b| b.index);
    for (entry, _) in &scanned {
        let mut e = entry.clone();
        e.parameter = "mu".into();
        e.selected = Some(trace.len()) == chosen_rch;
        trace.push(e);
    }
    if let Some(c) = best {
        let mu = opts.mu_grid[c.index];
        let agr = Agreement {
            pct: c.cal.pct,
            mismatches: c.cal.mismatches.clone(),
        };
        let mut rep = base_report(ModelKind::Binary, Regime::Rch { mu }, c.coeffs, c.threshold, opts, n, agr);
        rep.normalized_margin = c.margin;
        rep.certificate = Some(cert);
        rep.selection_trace = trace;
        return Ok(rep);
    }

    // soft fallback: closest reduced hulls down to the centroids
    let mut soft_grid = opts.mu_grid.clone();
    let floor = (1.0 / np).min(1.0 / nm);
    let mut mu = soft_grid.last().copied().unwrap_or(1.0);
    while mu > floor {
        mu = (mu / 2.0).max(floor);
        soft_grid.push(mu);
    }
    let soft: Vec<(TraceEntry, Option<BinaryCandidate>)> = soft_grid
        .par_iter()
        .enumerate()
        .map(|(i, &mu)| evaluate_cap(i, mu))
        .collect::<Result<_>>()?;
    let mut best: Option<&BinaryCandidate> = None;
    for (_, cand) in &soft {
        let Some(c) = cand else { continue };
        let better = match best {
            None => true,
            Some(b) => c
                .cal
                .pct
                .total_cmp(&b.cal.pct)
                .then(b.slack.0.total_cmp(&c.slack.0))
                .then(c.slack.2.total_cmp(&b.slack.2))
                .then(b.index.cmp(&c.index))
                .is_gt(),
        };
        if better {
            best = Some(c);
        }
    }
    let chosen = best.map(|b| b.index);
    for (i, (entry, _)) in soft.iter().enumerate() {
        let mut e = entry.clone();
        e.parameter = "mu_soft".into();
        e.value = soft_grid[i] / 2.0;
        e.selected = Some(i) == chosen;
        trace.push(e);
    }
    let mut rep = match best {
        Some(c) => {
            let agr = Agreement {
                pct: c.cal.pct,
                mismatches: c.cal.mismatches.clone(),
            };
            let mut rep = base_report(
                ModelKind::Binary,
                Regime::Soft { c: soft_grid[c.index] / 2.0 },
                c.coeffs,
                c.threshold,
                opts,
                n,
                agr,
            );
            rep.normalized_margin = c.slack.2;
            rep.slack_sum = Some(c.slack.0);
            rep.slack_count = Some(c.slack.1);
            rep.worst_margin = Some(c.slack.2);
            rep
        }
        None => {
            // even the centroids coincide: keep the identity direction
            let theta = Point2::new(0.0, 1.0);
            let (l, h) = projection_extremes(theta, &plus, &minus);
            let (coeffs, thr) = binary_coeffs(theta, l, h, &cloud, opts.threshold_mode).unwrap_or_else(|| plain_coeffs(theta));
            let agr = agreement_on(targets, &decide(&coeffs, thr)?, None);
            let mut rep = base_report(ModelKind::Binary, Regime::Soft { c: floor / 2.0 }, coeffs, thr, opts, n, agr);
            rep.normalized_margin = l - h;
            rep
        }
    };
    rep.certificate = Some(cert);
    rep.selection_trace = trace;
    Ok(rep)
}

/// Multiclass hard QP, then the soft C grid.
pub fn fit_multiclass(model: &MlpModel, cal: &CalibrationSet, opts: &CascadeOptions) -> Result<FitReport> {
    opts.validate()?;
    if model.kind() != ModelKind::Multiclass {
        return Err(ModelError::KindMismatch { expected: "multiclass" }.into());
    }
    check_two_classes(&cal.targets)?;
    let preacts = model.preactivations(&cal.features)?;
    let stats = class_stats(model, &preacts)?;
    let lifts = pairwise_lifts(&stats, &cal.targets)?;
    fit_multiclass_lifts(model, cal, &lifts, opts)
}

fn theta_norm(t: &[f64; 4]) -> f64 {
    t.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn fit_multiclass_lifts(model: &MlpModel, cal: &CalibrationSet, lifts: &PairwiseLiftSet, opts: &CascadeOptions) -> Result<FitReport> {
    let targets = &cal.targets;
    let n = targets.len();
    let hard = mc_hard(lifts);
    if hard.status == McStatus::Feasible && hard.coeffs.is_finite() {
        let dec = deployed_decisions(model, &hard.coeffs, 0.0, &cal.features)?;
        let agr = agreement_on(targets, &dec, None);
        if agr.mismatches.is_empty() {
            let mut rep = base_report(ModelKind::Multiclass, Regime::Hard, hard.coeffs, 0.0, opts, n, agr);
            rep.exact = true;
            rep.pair_count = Some(lifts.len());
            rep.normalized_margin = hard.worst_margin / theta_norm(&hard.theta_bar);
            rep.worst_margin = Some(hard.worst_margin);
            rep.homogeneous = Some(hard.theta_bar);
            return Ok(rep);
        }
    }

    struct Cand {
        sol: crate::qpsolvers::McSolution,
        agr: Agreement,
    }
    let mut solver = SoftSolver::new(lifts);
    let mut cands: Vec<Cand> = Vec::with_capacity(opts.c_grid.len());
    for &c in &opts.c_grid {
        let sol = solver.solve(c)?;
        let dec = deployed_decisions(model, &sol.coeffs, 0.0, &cal.features)?;
        cands.push(Cand {
            agr: agreement_on(targets, &dec, None),
            sol,
        });
    }
    let summaries: Vec<SoftSummary> = cands
        .iter()
        .map(|c| SoftSummary {
            agreement: c.agr.pct,
            slack_sum: c.sol.slack_sum(),
            worst_margin: c.sol.worst_margin,
            norm: c.sol.norm(),
        })
        .collect();
    let best = select_soft(&summaries).expect("C grid is non-empty");
    let trace: Vec<TraceEntry> = cands
        .iter()
        .enumerate()
        .map(|(i, c)| TraceEntry {
            parameter: "c".into(),
            value: opts.c_grid[i],
            mu_plus: None,
            mu_minus: None,
            feasible: true,
            distance: None,
            normalized_margin: c.sol.worst_margin / c.sol.norm(),
            cal_agreement: c.agr.pct,
            val_agreement: None,
            slack_sum: Some(c.sol.slack_sum()),
            slack_count: Some(c.sol.slack_count()),
            worst_margin: Some(c.sol.worst_margin),
            theta_norm: Some(c.sol.norm()),
            selected: i == best,
        })
        .collect();
    let c = cands.swap_remove(best);
    let mut rep = base_report(
        ModelKind::Multiclass,
        Regime::Soft { c: opts.c_grid[best] },
        c.sol.coeffs,
        0.0,
        opts,
        n,
        c.agr,
    );
    rep.pair_count = Some(lifts.len());
    rep.normalized_margin = c.sol.worst_margin / c.sol.norm();
    rep.slack_count = Some(c.sol.slack_count());
    rep.slack_sum = Some(c.sol.slack_sum());
    rep.worst_margin = Some(c.sol.worst_margin);
    rep.homogeneous = Some(c.sol.theta_bar);
    rep.selection_trace = trace;
    Ok(rep)
}

/// What the C-grid selection looks at for one penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftSummary {
    pub agreement: f64,
    pub slack_sum: f64,
    pub worst_margin: f64,
    pub norm: f64,
}

/// Index of the preferred penalty: higher agreement, then smaller `Σξ`, then
/// larger worst margin, then smaller `‖θ̄‖`; exact ties keep the earlier entry.
pub fn select_soft(cands: &[SoftSummary]) -> Option<usize> {
    let mut best = None::<usize>;
    for (i, c) in cands.iter().enumerate() {
        let better = match best {
            None => true,
            Some(j) => {
                let b = &cands[j];
                c.agreement
                    .total_cmp(&b.agreement)
                    .then(b.slack_sum.total_cmp(&c.slack_sum))
                    .then(c.worst_margin.total_cmp(&b.worst_margin))
                    .then(b.norm.total_cmp(&c.norm))
                    .is_gt()
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Dispatches on the model kind.
pub fn fit(model: &MlpModel, cal: &CalibrationSet, opts: &CascadeOptions) -> Result<FitReport> {
    match model.kind() {
        ModelKind::Binary => fit_binary(model, cal, opts),
        ModelKind::Multiclass => fit_multiclass(model, cal, opts),
    }
}

/// Rounds a binary hard-regime direction to multiples of `step`, recomputes
/// the offset and records whether the rounding is covered by the margin
/// certificate, together with a full recheck of the calibration decisions.
pub fn quantize_and_certify(report: &FitReport, model: &MlpModel, cal: &CalibrationSet, step: f64) -> Result<FitReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(CascadeError::InvalidStep(step));
    }
    if report.kind != ModelKind::Binary || report.regime != Regime::Hard {
        return Err(CascadeError::NotHardRegime);
    }
    let cert = report.certificate.as_ref().ok_or(CascadeError::NotHardRegime)?;
    let preacts = model.preactivations(&cal.features)?;
    let cloud = binary_lift(model, &preacts, &cal.targets)?;
    let plus = cloud.positives();
    let minus = cloud.negatives();
    let star = cert.theta_star;
    let theta_hat = Point2::new((star.x / step).round() * step, (star.y / step).round() * step);
    let zero = theta_hat.x == 0.0 && theta_hat.y == 0.0;
    let check = if zero { None } else { Some(quantization_check(cert, theta_hat)?) };
    let (l, h) = projection_extremes(theta_hat, &plus, &minus);
    let (coeffs, thr) = binary_coeffs(theta_hat, l, h, &cloud, report.threshold_mode).unwrap_or_else(|| plain_coeffs(theta_hat));
    let dec = deployed_decisions(model, &coeffs, thr, &cal.features)?;
    let agr = agreement_on(&cal.targets, &dec, None);
    let mut out = report.clone();
    out.exact = report.exact && agr.mismatches.is_empty();
    out.coeffs = coeffs;
    out.threshold = thr;
    out.quantization = Some(QuantizationReport {
        step,
        theta_hat,
        certified: check.is_some_and(|c| c.certified),
        check,
        empirical_margin: l - h,
        mismatches: agr.mismatches.len(),
    });
    out.cal_agreement = agr.pct;
    out.cal_mismatches = agr.mismatches.len();
    out.cal_mismatch_indices = agr.mismatches;
    Ok(out)
}

/// Adds held-out diagnostics: agreement with the ReLU model on `x` and,
/// with labels, accuracy and macro-F1 of the polynomialized model.
pub fn attach_test(report: &mut FitReport, model: &MlpModel, x: &Matrix, labels: Option<&[usize]>) -> Result<()> {
    let relu = relu_decisions(model, x)?;
    let poly = deployed_decisions(model, &report.coeffs, report.threshold, x)?;
    let stats = evaluate(&relu, &poly, labels)?;
    report.test = Some(TestDiagnostics {
        n: stats.n,
        agreement: stats.agreement,
        mismatches: stats.mismatches(),
        mismatch_indices: stats.mismatch_indices,
        accuracy: stats.accuracy,
        macro_f1: stats.macro_f1,
    });
    Ok(())
}
