//! Fixed-interval scalar ReLU approximations used as comparison points:
//! the square activation, least-squares fits and minimax (Remez) fits.
//!
//! Fits are computed in the scaled variable `t ∈ [−1, 1]` on a Chebyshev
//! basis and converted to ascending power-basis coefficients in `u` at the
//! end.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

pub const DEFAULT_GRID: usize = 4001;
const REMEZ_MAX_ITER: usize = 100;
const LP_MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("no pre-activations to take an interval from")]
    EmptyInput,
    #[error("degenerate fit interval [{0}, {1}]")]
    DegenerateInterval(f64, f64),
    #[error("grid of {grid} points cannot determine a degree-{degree} fit")]
    GridTooSmall { grid: usize, degree: usize },
    #[error("minimax LP did not converge")]
    LpFailure,
}

pub type Result<T> = std::result::Result<T, BaselineError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Square,
    LeastSquares,
    Remez,
    Explicit,
}

/// How optimality of a minimax fit was established.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// Error alternates in sign with equal magnitude at these points.
    Equioscillation { points: Vec<f64>, level: f64 },
    /// Optimal basis of the minimax LP.
    Lp { support: Vec<f64>, level: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyActivation {
    /// Ascending powers of `u`.
    pub coefficients: Vec<f64>,
    pub interval: [f64; 2],
    pub method: FitMethod,
    /// Largest `|p(u) − max(0, u)|` over the fit grid.
    pub max_error: f64,
    pub certificate: Option<Certificate>,
}

impl PolyActivation {
    pub fn from_coefficients(coefficients: Vec<f64>, interval: [f64; 2]) -> Self {
        Self {
            coefficients,
            interval,
            method: FitMethod::Explicit,
            max_error: 0.0,
            certificate: None,
        }
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    /// Horner evaluation.
    pub fn apply(&self, u: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }
}

fn relu(u: f64) -> f64 {
    u.max(0.0)
}

/// `u²`, reported as degree 2.
pub fn square_activation() -> PolyActivation {
    PolyActivation {
        coefficients: vec![0.0, 0.0, 1.0],
        interval: [f64::NEG_INFINITY, f64::INFINITY],
        method: FitMethod::Square,
        max_error: 0.0,
        certificate: None,
    }
}

/// Global `[min, max]` over all entries.
pub fn empirical_interval(preacts: &Matrix) -> Result<[f64; 2]> {
    let v = preacts.as_slice();
    if v.is_empty() {
        return Err(BaselineError::EmptyInput);
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok([lo, hi])
}

fn check(degree: usize, [a, b]: [f64; 2], grid_size: usize) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(BaselineError::DegenerateInterval(a, b));
    }
    if grid_size < degree + 2 {
        return Err(BaselineError::GridTooSmall { grid: grid_size, degree });
    }
    Ok(())
}

/// Uniform grid over `[a, b]`, with the ReLU kink added when it falls inside.
pub fn fit_grid([a, b]: [f64; 2], grid_size: usize) -> Vec<f64> {
    let step = (b - a) / (grid_size - 1) as f64;
    let mut g: Vec<f64> = (0..grid_size).map(|i| a + step * i as f64).collect();
    g[grid_size - 1] = b;
    if a < 0.0 && 0.0 < b && !g.contains(&0.0) {
        let pos = g.partition_point(|&u| u < 0.0);
        g.insert(pos, 0.0);
    }
    g
}

fn to_unit([a, b]: [f64; 2], u: f64) -> f64 {
    (2.0 * u - (a + b)) / (b - a)
}

fn chebyshev_row(t: f64, degree: usize) -> Vec<f64> {
    let mut row = vec![1.0; degree + 1];
    if degree >= 1 {
        row[1] = t;
    }
    for k in 2..=degree {
        row[k] = 2.0 * t * row[k - 1] - row[k - 2];
    }
    row
}

/// Chebyshev coefficients in `t` to ascending power coefficients in `u`.
fn chebyshev_to_power(cheb: &[f64], [a, b]: [f64; 2]) -> Vec<f64> {
    let n = cheb.len();
    // power coefficients of each T_k in t
    let mut tk: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut p = vec![0.0; n];
        match k {
            0 => p[0] = 1.0,
            1 => p[1] = 1.0,
            _ => {
                for j in 0..n - 1 {
                    p[j + 1] += 2.0 * tk[k - 1][j];
                }
                for j in 0..n {
                    p[j] -= tk[k - 2][j];
                }
            }
        }
        tk.push(p);
    }
    let mut in_t = vec![0.0; n];
    for (k, c) in cheb.iter().enumerate() {
        for j in 0..n {
            in_t[j] += c * tk[k][j];
        }
    }
    // t = s·u + o
    let s = 2.0 / (b - a);
    let o = -(a + b) / (b - a);
    let mut out = vec![0.0; n];
    for (k, &ck) in in_t.iter().enumerate() {
        let mut binom = 1.0;
        for j in 0..=k {
            out[j] += ck * binom * s.powi(j as i32) * o.powi((k - j) as i32);
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
    }
    out
}

fn grid_max_error(coefficients: &[f64], grid: &[f64]) -> f64 {
    let p = PolyActivation::from_coefficients(coefficients.to_vec(), [0.0, 0.0]);
    grid.iter().map(|&u| (p.apply(u) - relu(u)).abs()).fold(0.0, f64::max)
}

/// Least squares via Householder QR of the Chebyshev design matrix.
fn least_squares_cheb(rows: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let m = rows.len();
    let n = rows[0].len();
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let mut y = rhs.to_vec();
    for k in 0..n {
        let norm: f64 = (k..m).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        for col in k..n {
            let d: f64 = (k..m).map(|i| v[i - k] * a[i][col]).sum::<f64>() * 2.0 / vv;
            for i in k..m {
                a[i][col] -= d * v[i - k];
            }
        }
        let d: f64 = (k..m).map(|i| v[i - k] * y[i]).sum::<f64>() * 2.0 / vv;
        for i in k..m {
            y[i] -= d * v[i - k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let tail: f64 = (k + 1..n).map(|c| a[k][c] * x[c]).sum();
        x[k] = (y[k] - tail) / a[k][k];
    }
    x
}

pub fn fit_least_squares(degree: usize, interval: [f64; 2], grid_size: usize) -> Result<PolyActivation> {
    if degree == 0 {
        return Err(BaselineError::GridTooSmall { grid: grid_size, degree });
    }
    check(degree, interval, grid_size)?;
    let grid = fit_grid(interval, grid_size);
    let rows: Vec<Vec<f64>> = grid.iter().map(|&u| chebyshev_row(to_unit(interval, u), degree)).collect();
    let rhs: Vec<f64> = grid.iter().map(|&u| relu(u)).collect();
    let cheb = least_squares_cheb(&rows, &rhs);
    let coefficients = chebyshev_to_power(&cheb, interval);
    Ok(PolyActivation {
        max_error: grid_max_error(&coefficients, &grid),
        coefficients,
        interval,
        method: FitMethod::LeastSquares,
        certificate: None,
    })
}

/// Dense Gaussian elimination with partial pivoting; `None` if singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[piv][k].abs() < 1e-300 {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let tail: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - tail) / a[k][k];
    }
    Some(x)
}

fn eval_cheb(c: &[f64], t: f64) -> f64 {
    chebyshev_row(t, c.len() - 1).iter().zip(c).map(|(r, c)| r * c).sum()
}

enum RemezOutcome {
    Converged { cheb: Vec<f64>, reference: Vec<usize>, level: f64 },
    Stalled,
}

/// Discrete exchange on the grid from a Chebyshev-extrema reference.
fn remez_exchange(degree: usize, ts: &[f64], f: &[f64]) -> RemezOutcome {
    let n_ref = degree + 2;
    let g = ts.len();
    let mut reference: Vec<usize> = (0..n_ref)
        .map(|k| {
            let x = -(std::f64::consts::PI * k as f64 / (n_ref - 1) as f64).cos();
            ts.partition_point(|&t| t < x).min(g - 1)
        })
        .collect();
    reference.dedup();
    if reference.len() < n_ref {
        reference = (0..n_ref).map(|k| k * (g - 1) / (n_ref - 1)).collect();
    }
    let mut last_level = -1.0;
    for _ in 0..REMEZ_MAX_ITER {
        let mut a = Vec::with_capacity(n_ref);
        let mut b = Vec::with_capacity(n_ref);
        for (i, &r) in reference.iter().enumerate() {
            let mut row = chebyshev_row(ts[r], degree);
            row.push(if i % 2 == 0 { 1.0 } else { -1.0 });
            a.push(row);
            b.push(f[r]);
        }
        let Some(sol) = solve_dense(a, b) else {
            return RemezOutcome::Stalled;
        };
        let level = sol[n_ref - 1].abs();
        let cheb = sol[..n_ref - 1].to_vec();
        let err: Vec<f64> = ts.iter().zip(f).map(|(&t, &fv)| fv - eval_cheb(&cheb, t)).collect();
        let (imax, emax) = err
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, e)| if e.abs() > acc.1 { (i, e.abs()) } else { acc });
        if emax - level <= 1e-12 * emax.max(1.0) {
            return RemezOutcome::Converged { cheb, reference, level };
        }
        if level <= last_level * (1.0 + 1e-15) {
            return RemezOutcome::Stalled;
        }
        last_level = level;

        // one extremum per run of constant error sign
        let mut runs: Vec<usize> = Vec::new();
        for (i, &e) in err.iter().enumerate() {
            if e == 0.0 {
                continue;
            }
            match runs.last() {
                Some(&last) if err[last].signum() == e.signum() => {
                    if e.abs() > err[last].abs() {
                        *runs.last_mut().unwrap() = i;
                    }
                }
                _ => runs.push(i),
            }
        }
        if runs.len() < n_ref {
            return RemezOutcome::Stalled;
        }
        let pos = runs.iter().position(|&i| err[i].abs() >= err[imax].abs()).unwrap_or(0);
        let lo = pos.saturating_sub(n_ref - 1);
        let hi = pos.min(runs.len() - n_ref);
        let start = (lo..=hi)
            .max_by(|&x, &y| {
                let mx = runs[x..x + n_ref].iter().map(|&i| err[i].abs()).fold(f64::INFINITY, f64::min);
                let my = runs[y..y + n_ref].iter().map(|&i| err[i].abs()).fold(f64::INFINITY, f64::min);
                mx.total_cmp(&my).then(y.cmp(&x))
            })
            .unwrap_or(lo);
        let next: Vec<usize> = runs[start..start + n_ref].to_vec();
        if next == reference {
            return RemezOutcome::Stalled;
        }
        reference = next;
    }
    RemezOutcome::Stalled
}

/// `min t  s.t. |p(u_g) − relu(u_g)| ≤ t` on every grid point, solved
/// through its dual
/// `max Σ f_g (w_g − y_g)  s.t.  Σ φ_k(u_g)(y_g − w_g) = 0, Σ(y_g + w_g) = 1`
/// by a revised simplex method. Returns Chebyshev coefficients, the level
/// and the support grid indices.
fn minimax_lp(degree: usize, ts: &[f64], f: &[f64]) -> Result<(Vec<f64>, f64, Vec<usize>)> {
    let g = ts.len();
    let m = degree + 2;
    let cols = 2 * g;
    let basis_rows: Vec<Vec<f64>> = ts.iter().map(|&t| chebyshev_row(t, degree)).collect();
    let column = |j: usize| -> Vec<f64> {
        let (gi, sign) = if j < g { (j, 1.0) } else { (j - g, -1.0) };
        let mut c: Vec<f64> = basis_rows[gi].iter().map(|v| sign * v).collect();
        c.push(1.0);
        c
    };
    let cost = |j: usize| if j < g { f[j] } else { -f[j - g] };
    let mut rhs = vec![0.0; m];
    rhs[m - 1] = 1.0;

    // columns >= cols are artificials (identity), used in phase one only
    let mut basis: Vec<usize> = (cols..cols + m).collect();
    let col_of = |j: usize| -> Vec<f64> {
        if j >= cols {
            let mut e = vec![0.0; m];
            e[j - cols] = 1.0;
            e
        } else {
            column(j)
        }
    };
    let invert = |basis: &[usize]| -> Option<Vec<Vec<f64>>> {
        let bm: Vec<Vec<f64>> = basis.iter().map(|&j| col_of(j)).collect();
        // inverse of the matrix whose columns are bm
        let mut inv = vec![vec![0.0; m]; m];
        for k in 0..m {
            let mut a = vec![vec![0.0; m]; m];
            for (c, colv) in bm.iter().enumerate() {
                for r in 0..m {
                    a[r][c] = colv[r];
                }
            }
            let mut e = vec![0.0; m];
            e[k] = 1.0;
            let x = solve_dense(a, e)?;
            for r in 0..m {
                inv[r][k] = x[r];
            }
        }
        Some(inv)
    };

    for phase in 0..2 {
        let phase_cost = |j: usize| -> f64 {
            if phase == 0 {
                if j >= cols {
                    1.0
                } else {
                    0.0
                }
            } else if j >= cols {
                f64::INFINITY
            } else {
                cost(j)
            }
        };
        let mut stall = 0usize;
        let mut pivots = 0usize;
        loop {
            pivots += 1;
            if pivots > LP_MAX_PIVOTS {
                return Err(BaselineError::LpFailure);
            }
            let inv = invert(&basis).ok_or(BaselineError::LpFailure)?;
            let xb: Vec<f64> = (0..m).map(|r| (0..m).map(|k| inv[r][k] * rhs[k]).sum()).collect();
            let cb: Vec<f64> = basis
                .iter()
                .map(|&j| if phase == 1 && j >= cols { 0.0 } else { phase_cost(j) })
                .collect();
            let pi: Vec<f64> = (0..m).map(|k| (0..m).map(|r| cb[r] * inv[r][k]).sum()).collect();
            let use_bland = stall > 50;
            let mut enter: Option<(usize, f64)> = None;
            for j in 0..cols {
                if basis.contains(&j) {
                    continue;
                }
                let cj = column(j);
                let rc = phase_cost(j) - (0..m).map(|k| pi[k] * cj[k]).sum::<f64>();
                if rc < -1e-12 {
                    if use_bland {
                        enter = Some((j, rc));
                        break;
                    }
                    if enter.map_or(true, |(_, best)| rc < best) {
                        enter = Some((j, rc));
                    }
                }
            }
            let Some((j, _)) = enter else {
                if phase == 0 {
                    let infeas: f64 = basis
                        .iter()
                        .zip(&xb)
                        .filter(|(&b, _)| b >= cols)
                        .map(|(_, x)| x)
                        .sum();
                    if infeas > 1e-9 {
                        return Err(BaselineError::LpFailure);
                    }
                    break;
                }
                // optimal: prices give the primal polynomial and level
                let level = -pi[m - 1];
                let support: Vec<usize> = basis
                    .iter()
                    .filter(|&&b| b < cols)
                    .map(|&b| if b < g { b } else { b - g })
                    .collect();
                return Ok((pi[..m - 1].to_vec(), level, support));
            };
            let cj = column(j);
            let d: Vec<f64> = (0..m).map(|r| (0..m).map(|k| inv[r][k] * cj[k]).sum()).collect();
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                if d[r] > 1e-12 {
                    let ratio = xb[r] / d[r];
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - 1e-15 || (ratio <= lratio + 1e-15 && basis[r] < basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((r, ratio)) = leave else {
                return Err(BaselineError::LpFailure);
            };
            stall = if ratio <= 1e-15 { stall + 1 } else { 0 };
            basis[r] = j;
        }
        // drive artificials left at zero out of the basis before phase two
        for r in 0..m {
            if basis[r] < cols {
                continue;
            }
            let inv = invert(&basis).ok_or(BaselineError::LpFailure)?;
            let swap = (0..cols).filter(|j| !basis.contains(j)).find(|&j| {
                let cj = column(j);
                (0..m).map(|k| inv[r][k] * cj[k]).sum::<f64>().abs() > 1e-9
            });
            match swap {
                Some(j) => basis[r] = j,
                None => return Err(BaselineError::LpFailure),
            }
        }
    }
    Err(BaselineError::LpFailure)
}

/// Minimax fit by the LP route alone.
pub fn fit_minimax_lp(degree: usize, interval: [f64; 2], grid_size: usize) -> Result<PolyActivation> {
    check(degree, interval, grid_size)?;
    let grid = fit_grid(interval, grid_size);
    let ts: Vec<f64> = grid.iter().map(|&u| to_unit(interval, u)).collect();
    let f: Vec<f64> = grid.iter().map(|&u| relu(u)).collect();
    let (cheb, level, support) = minimax_lp(degree, &ts, &f)?;
    let coefficients = chebyshev_to_power(&cheb, interval);
    Ok(PolyActivation {
        max_error: grid_max_error(&coefficients, &grid),
        coefficients,
        interval,
        method: FitMethod::Remez,
        certificate: Some(Certificate::Lp {
            support: support.iter().map(|&i| grid[i]).collect(),
            level,
        }),
    })
}

/// Minimax fit on the grid: exchange iteration, LP fallback on stall.
pub fn fit_remez(degree: usize, interval: [f64; 2], grid_size: usize) -> Result<PolyActivation> {
    check(degree, interval, grid_size)?;
    let grid = fit_grid(interval, grid_size);
    let ts: Vec<f64> = grid.iter().map(|&u| to_unit(interval, u)).collect();
    let f: Vec<f64> = grid.iter().map(|&u| relu(u)).collect();
    match remez_exchange(degree, &ts, &f) {
        RemezOutcome::Converged { cheb, reference, level } => {
            let coefficients = chebyshev_to_power(&cheb, interval);
            Ok(PolyActivation {
                max_error: grid_max_error(&coefficients, &grid),
                coefficients,
                interval,
                method: FitMethod::Remez,
                certificate: Some(Certificate::Equioscillation {
                    points: reference.iter().map(|&i| grid[i]).collect(),
                    level,
                }),
            })
        }
        RemezOutcome::Stalled => fit_minimax_lp(degree, interval, grid_size),
    }
}
