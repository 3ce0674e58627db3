//! Reference estimators: least squares, hard thresholding, maximum
//! likelihood for the sparse signal in noise model, and OMP. Closed-form
//! moments are provided where they exist (LS, hard thresholding).

use std::sync::Arc;

use nalgebra::DVector;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::model::{select_columns, GaussianLinearModel, SparseProblem};
use crate::ParamVector;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("estimator requires H = I")]
    WrongModel,
    #[error("selected column submatrix is rank-deficient")]
    SingularSubmatrix,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Scalar estimator applied to the target entry `y_k` only.
#[derive(Debug, Clone, PartialEq)]
pub enum DiagonalEstimator {
    /// `y -> y` (the LS estimator for `H = I`).
    Identity,
    /// `y -> c0` regardless of the data.
    Constant(f64),
    /// `y -> y * 1[|y| >= T]`.
    HardThreshold(f64),
}

impl DiagonalEstimator {
    pub fn apply(&self, y: f64) -> f64 {
        match *self {
            DiagonalEstimator::Identity => y,
            DiagonalEstimator::Constant(c0) => c0,
            DiagonalEstimator::HardThreshold(t) => {
                if y.abs() >= t {
                    y
                } else {
                    0.0
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            DiagonalEstimator::Identity => "ls".into(),
            DiagonalEstimator::Constant(c0) => format!("const{c0}"),
            DiagonalEstimator::HardThreshold(t) => format!("ht{t}"),
        }
    }

    /// Kinks of the map, used as quadrature breakpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            DiagonalEstimator::HardThreshold(t) if t > 0.0 => vec![-t, t],
            _ => Vec::new(),
        }
    }

    /// Exact mean and variance under `y ~ N(x, sigma2)`.
    pub fn moments(&self, x: f64, sigma2: f64) -> (f64, f64) {
        match *self {
            DiagonalEstimator::Identity => (x, sigma2),
            DiagonalEstimator::Constant(c0) => (c0, 0.0),
            DiagonalEstimator::HardThreshold(t) => ht_moments(t, x, sigma2),
        }
    }

    /// Exact derivative of the mean with respect to `x`.
    pub fn mean_derivative(&self, x: f64, sigma2: f64) -> f64 {
        match *self {
            DiagonalEstimator::Identity => 1.0,
            DiagonalEstimator::Constant(_) => 0.0,
            DiagonalEstimator::HardThreshold(t) => ht_mean_derivative(t, x, sigma2),
        }
    }

    /// Componentwise application as a vector estimator on `H = I`.
    pub fn to_vector_estimator(&self) -> VectorEstimator {
        let est = self.clone();
        VectorEstimator::new(self.label(), move |y| {
            Ok(DVector::from_fn(y.len(), |i, _| est.apply(y[i])))
        })
    }
}

pub fn hard_threshold(t: f64) -> DiagonalEstimator {
    DiagonalEstimator::HardThreshold(t)
}

/// Standard normal density.
fn phi_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Exact mean and variance of the hard-thresholding estimator under
/// `y ~ N(x, sigma2)`, via truncated-normal moment identities with
/// `alpha = (-T - x)/sigma`, `beta = (T - x)/sigma`.
pub fn ht_moments(t: f64, x: f64, sigma2: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (x, sigma2);
    }
    let sigma = sigma2.sqrt();
    let alpha = (-t - x) / sigma;
    let beta = (t - x) / sigma;
    let p_in = normal_cdf(beta) - normal_cdf(alpha);
    let dphi = phi_pdf(alpha) - phi_pdf(beta);
    // moments of y over the zeroed region [-T, T]
    let mean_in = x * p_in + sigma * dphi;
    let second_in = x * x * p_in + 2.0 * x * sigma * dphi
        + sigma2 * (p_in + alpha * phi_pdf(alpha) - beta * phi_pdf(beta));
    let mean = x - mean_in;
    let second = (x * x + sigma2) - second_in;
    let variance = (second - mean * mean).max(0.0);
    (mean, variance)
}

/// Analytic derivative of the hard-thresholding mean with respect to `x`.
pub fn ht_mean_derivative(t: f64, x: f64, sigma2: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let sigma = sigma2.sqrt();
    let alpha = (-t - x) / sigma;
    let beta = (t - x) / sigma;
    let p_in = normal_cdf(beta) - normal_cdf(alpha);
    let d_mean_in = p_in + x * (phi_pdf(alpha) - phi_pdf(beta)) / sigma
        + alpha * phi_pdf(alpha) - beta * phi_pdf(beta);
    1.0 - d_mean_in
}

/// Vector estimator: a labeled map from observations to parameter estimates.
#[derive(Clone)]
pub struct VectorEstimator {
    label: String,
    f: Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>, EstimatorError> + Send + Sync>,
}

impl VectorEstimator {
    pub fn new<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>, EstimatorError> + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn estimate(&self, y: &DVector<f64>) -> Result<DVector<f64>, EstimatorError> {
        (self.f)(y)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl std::fmt::Debug for VectorEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorEstimator").field("label", &self.label).finish()
    }
}

/// Least-squares estimator `x_hat = H^dagger y` (minimum-norm solution).
pub fn ls(problem: &SparseProblem) -> VectorEstimator {
    let svd = problem.model.svd().clone();
    VectorEstimator::new("ls", move |y| Ok(svd.pinv_mul(y)))
}

/// Maximum-likelihood estimator for the SSNM: keeps the S largest-magnitude
/// entries of `y`, magnitude ties broken by smallest index.
pub fn ml(problem: &SparseProblem) -> Result<VectorEstimator, EstimatorError> {
    if !problem.model.is_identity() {
        return Err(EstimatorError::WrongModel);
    }
    let s = problem.s;
    Ok(VectorEstimator::new("ml", move |y| {
        let keep = largest_magnitude_indices(y, s);
        let mut out = DVector::zeros(y.len());
        for &i in &keep {
            out[i] = y[i];
        }
        Ok(out)
    }))
}

/// Indices of the `s` largest-magnitude entries, ties by smallest index.
pub fn largest_magnitude_indices(y: &DVector<f64>, s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| {
        y[b].abs()
            .partial_cmp(&y[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(s.min(y.len()));
    idx.sort_unstable();
    idx
}

/// Orthogonal matching pursuit with a fixed iteration count: greedy column
/// selection by maximal residual correlation, full LS refit each iteration.
pub fn omp(
    model: &GaussianLinearModel,
    y: &DVector<f64>,
    iterations: usize,
) -> Result<ParamVector, EstimatorError> {
    let h = model.h();
    let n = h.ncols();
    if iterations == 0 || iterations > n {
        return Err(EstimatorError::InvalidArgument(format!(
            "iterations {iterations} outside [1, {n}]"
        )));
    }
    let mut selected: Vec<usize> = Vec::with_capacity(iterations);
    let mut residual = y.clone();
    let mut coeffs = DVector::zeros(0);
    for _ in 0..iterations {
        let mut best = usize::MAX;
        let mut best_corr = -1.0;
        for j in 0..n {
            if selected.contains(&j) {
                continue;
            }
            let corr = h.column(j).dot(&residual).abs();
            if corr > best_corr {
                best_corr = corr;
                best = j;
            }
        }
        selected.push(best);
        let sub = select_columns(h, &selected);
        let svd = sub.clone().svd(true, true);
        let rank_ok = {
            let sv = &svd.singular_values;
            let max_sv = sv.iter().cloned().fold(0.0f64, f64::max);
            sv.iter()
                .filter(|&&v| v > crate::model::rank_threshold(max_sv, selected.len()))
                .count()
                == selected.len()
        };
        if !rank_ok {
            return Err(EstimatorError::SingularSubmatrix);
        }
        coeffs = svd
            .solve(y, 0.0)
            .map_err(|_| EstimatorError::SingularSubmatrix)?;
        residual = y - sub * &coeffs;
    }
    let mut x = DVector::zeros(n);
    for (i, &j) in selected.iter().enumerate() {
        x[j] = coeffs[i];
    }
    Ok(ParamVector::new(x))
}

/// OMP wrapped as a vector estimator with the problem's iteration count `S`.
pub fn omp_estimator(problem: &SparseProblem) -> VectorEstimator {
    let model = problem.model.clone();
    let iters = problem.s;
    VectorEstimator::new("omp", move |y| Ok(omp(&model, y, iters)?.vector().clone()))
}
