//! Post-training replacement of ReLU by a shared quadratic `αu² + βu + η`
//! in single-hidden-layer MLPs (or MLP heads over frozen features).
//!
//! The coefficients are chosen so that the polynomialized model keeps the
//! trained model's decisions on a calibration set. The binary case reduces
//! to separating two planar point clouds `(Q, H)`; the multiclass case to a
//! four-variable margin QP over pairwise lift rows. When exact preservation
//! is impossible, reduced-convex-hull and soft-margin relaxations return
//! approximately feasible coefficients together with their diagnostics.
//!
//! Module map:
//!
//! - [`model_io`]: model / dataset files, ReLU forward pass, decision targets
//! - [`lift`]: binary `(Q, H)` clouds, class statistics, pairwise lift rows
//! - [`geom2d`]: exact planar hulls, directional margins, separation certificates
//! - [`qpsolvers`]: reduced-hull closest points, hard and soft multiclass QPs
//! - [`cascade`]: hard → RCH → soft orchestration and [`cascade::FitReport`]
//! - [`baselines`]: square, least-squares and minimax fixed-interval fits
//! - [`evaluator`]: polynomialized forward pass and agreement metrics
//! - [`fhecost`]: leveled-CKKS operation counts and parameter selection
//! - [`cli`]: the batch command-line front end

pub mod baselines;
pub mod cascade;
pub mod cli;
pub mod evaluator;
pub mod fhecost;
pub mod geom2d;
pub mod lift;
pub mod matrix;
pub mod model_io;
pub mod qpsolvers;

pub use cascade::{fit, fit_binary, fit_multiclass, CascadeOptions, FitReport, QuadCoeffs, Regime};
pub use matrix::Matrix;
pub use model_io::{CalibrationSet, Logits, MlpModel, ModelKind};
