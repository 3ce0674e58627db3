//! Kernel and likelihood-ratio evaluation for the linear Gaussian model.
//!
//! The kernel of the mean-function space, centered at `x0`, is
//! `R(x1, x2) = exp((x2 - x0)^T H^T H (x1 - x0) / sigma^2)`; for `H = I` this
//! is the sparse-signal-in-noise kernel. Both the kernel and the likelihood
//! ratio `f(y; x) / f(y; x0)` are computed in the log domain.

use nalgebra::DVector;
use thiserror::Error;

use crate::model::GaussianLinearModel;
use crate::ParamVector;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("non-finite input")]
    InvalidInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A log-domain evaluation. `value` saturates to `+inf` when the exponent
/// exceeds the double range; `overflow` makes that saturation explicit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDomainValue {
    pub log_value: f64,
    pub value: f64,
    pub overflow: bool,
}

impl LogDomainValue {
    fn from_log(log_value: f64) -> Self {
        let value = log_value.exp();
        Self {
            log_value,
            value,
            overflow: value.is_infinite(),
        }
    }
}

/// Kernel evaluator centered at `x0`.
#[derive(Debug, Clone)]
pub struct KernelEval<'a> {
    model: &'a GaussianLinearModel,
    x0: ParamVector,
    hx0: DVector<f64>,
}

impl<'a> KernelEval<'a> {
    pub fn new(model: &'a GaussianLinearModel, x0: ParamVector) -> Result<Self, KernelError> {
        check_len(model.ncols(), x0.len())?;
        check_finite(x0.vector())?;
        let hx0 = model.h() * x0.vector();
        Ok(Self { model, x0, hx0 })
    }

    pub fn x0(&self) -> &ParamVector {
        &self.x0
    }

    /// `R(x1, x2) = exp((x2 - x0)^T H^T H (x1 - x0) / sigma^2)`.
    pub fn kernel(&self, x1: &ParamVector, x2: &ParamVector) -> Result<LogDomainValue, KernelError> {
        check_len(self.model.ncols(), x1.len())?;
        check_len(self.model.ncols(), x2.len())?;
        check_finite(x1.vector())?;
        check_finite(x2.vector())?;
        let d1 = self.model.h() * x1.vector() - &self.hx0;
        let d2 = self.model.h() * x2.vector() - &self.hx0;
        Ok(LogDomainValue::from_log(d2.dot(&d1) / self.model.sigma2()))
    }

    /// Likelihood ratio `f(y; x) / f(y; x0)`.
    pub fn likelihood_ratio(&self, y: &DVector<f64>, x: &ParamVector) -> Result<LogDomainValue, KernelError> {
        check_len(self.model.nrows(), y.len())?;
        check_len(self.model.ncols(), x.len())?;
        check_finite(y)?;
        check_finite(x.vector())?;
        let d = self.model.h() * x.vector() - &self.hx0;
        let s2 = self.model.sigma2();
        let log = (y - &self.hx0).dot(&d) / s2 - d.norm_squared() / (2.0 * s2);
        Ok(LogDomainValue::from_log(log))
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), KernelError> {
    if expected != got {
        return Err(KernelError::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn check_finite(v: &DVector<f64>) -> Result<(), KernelError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(KernelError::InvalidInput);
    }
    Ok(())
}
