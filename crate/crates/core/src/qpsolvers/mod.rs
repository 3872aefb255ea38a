//! Small convex QP kernels behind the cascade.
//!
//! - [`rch`]: two-hull closest points under weight caps and primal recovery
//! - [`multiclass`]: hard and slack-eliminated soft homogeneous margin QPs
//!
//! Solver state is single threaded; only full row sweeps run in parallel,
//! and they collect per-row results so the outcome is thread-count free.

mod active_set;
pub mod multiclass;
pub mod rch;

use thiserror::Error;

pub use multiclass::{mc_hard, mc_soft, recover_coeffs, soft_objective, McSolution, McStatus, SoftSolver};
pub use rch::{prch_objective, primal_from_dual, rch_closest_point, reduced_margin, RchSolution};

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("cap {mu} outside [1/{n}, 1]")]
    InvalidCap { mu: f64, n: usize },
    #[error("penalty must be positive and finite, got {0}")]
    InvalidPenalty(f64),
    #[error("reduced hulls touch: no primal direction")]
    DegenerateContact,
    #[error("both point sets must be non-empty")]
    EmptyClass,
    #[error("non-finite input point")]
    NonFinite,
}
