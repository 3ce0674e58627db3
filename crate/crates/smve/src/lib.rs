//! Lower bounds on estimator variance for sparse linear Gaussian models.
//!
//! The observation model is `y = H x + n` with an S-sparse parameter vector
//! `x` and white Gaussian noise `n ~ N(0, sigma^2 I)`. This crate evaluates
//! closed-form lower bounds on the variance of estimators with a prescribed
//! bias, exact Barankin bounds and locally minimum-variance (LMV) estimators
//! for the sparse-signal-in-noise special case `H = I`, and a seeded Monte
//! Carlo engine for validating the bounds against reference estimators
//! (least squares, hard thresholding, maximum likelihood, OMP).

pub mod bounds;
pub mod estimators;
pub mod experiments;
pub mod kernels;
pub mod mc;
pub mod model;
pub mod quad;
pub mod ssnm_exact;

pub use model::{GaussianLinearModel, ParamVector, SparseProblem};
