//! Exact Barankin bounds and LMV estimators for the sparse signal in noise
//! model (`H = I`) with diagonal bias functions.
//!
//! The prescribed mean `gamma(x) = c(x) + x_k` is expanded as a power series
//! `gamma(x) = sum_l (m_l / l!) (x_k - x0_k)^l`; with
//! `B_c = sum_l m_l^2 sigma^{2l} / l!`, the minimum achievable variance is
//! `M = B_c phi(x0) - gamma^2(x0)` and the LMV estimator is the anchor
//! estimator times the data-dependent correction factor `psi(y, x0)`.

use nalgebra::DVector;
use thiserror::Error;

use crate::estimators::DiagonalEstimator;
use crate::quad::{self, QuadError};
use crate::ParamVector;

#[derive(Debug, Error)]
pub enum SsnmError {
    #[error("Hermite order {0} exceeds the recurrence guard (500)")]
    OrderTooLarge(usize),
    #[error("invalid bias coefficients: {0}")]
    InvalidBias(String),
    #[error("invalid estimator: {0}")]
    InvalidEstimator(String),
    #[error("quadrature failure: {0}")]
    Quadrature(#[from] QuadError),
    #[error("noise variance mismatch: bias built for sigma2 = {expected}, called with {got}")]
    SigmaMismatch { expected: f64, got: f64 },
}

const HERMITE_GUARD: usize = 500;

/// Probabilists' Hermite polynomial `H_l(x)` via the three-term recurrence
/// `H_{l+1} = x H_l - l H_{l-1}`.
pub fn hermite(l: usize, x: f64) -> Result<f64, SsnmError> {
    if l > HERMITE_GUARD {
        return Err(SsnmError::OrderTooLarge(l));
    }
    let (mut prev, mut cur) = (1.0, x);
    if l == 0 {
        return Ok(1.0);
    }
    for j in 1..l {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Orthonormalized Hermite polynomial `H_l(x) / sqrt(l!)`, evaluated by a
/// rescaled recurrence that avoids the factorial overflow of `H_l` itself.
pub fn hermite_normalized(l: usize, x: f64) -> Result<f64, SsnmError> {
    if l > HERMITE_GUARD {
        return Err(SsnmError::OrderTooLarge(l));
    }
    let (mut prev, mut cur) = (1.0, x);
    if l == 0 {
        return Ok(1.0);
    }
    for j in 1..l {
        let next = (x * cur - (j as f64).sqrt() * prev) / ((j + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Support of `x0` ordered by descending magnitude, ties by smallest index.
/// This is the canonical ordering `k_1 .. k_S` used in `phi` and `psi`.
pub fn support_descending(x0: &ParamVector) -> Vec<usize> {
    let mut idx: Vec<usize> = x0.support().to_vec();
    idx.sort_by(|&a, &b| {
        x0.vector()[b]
            .abs()
            .partial_cmp(&x0.vector()[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

fn first_case(x0: &ParamVector, k: usize, s: usize) -> bool {
    x0.sparsity() < s || x0.support().contains(&k)
}

/// Multiplicative sparsity shrinkage factor `phi(x0)`, in `(0, 1]`.
pub fn phi_factor(x0: &ParamVector, k: usize, s: usize, sigma2: f64) -> f64 {
    if first_case(x0, k, s) {
        return 1.0;
    }
    let order = support_descending(x0);
    let mut sum = 0.0;
    let mut prod = 1.0;
    for &ki in &order {
        let a = (-x0.vector()[ki] * x0.vector()[ki] / sigma2).exp();
        sum += a * prod;
        prod *= 1.0 - a;
    }
    sum
}

/// Data-dependent correction factor `psi(y, x0)`; equals 1 in the first case
/// and never depends on `y_k`.
pub fn psi_factor(y: &DVector<f64>, x0: &ParamVector, k: usize, s: usize, sigma2: f64) -> f64 {
    if first_case(x0, k, s) {
        return 1.0;
    }
    let order = support_descending(x0);
    let mut sum = 0.0;
    let mut prod = 1.0;
    for &ki in &order {
        let xi = x0.vector()[ki];
        let a = (-(xi * xi + 2.0 * y[ki] * xi) / (2.0 * sigma2)).exp();
        sum += a * prod;
        prod *= 1.0 - a;
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientSource {
    Explicit,
    FromDiagonalEstimator,
}

/// Truncated power-series representation of a diagonal mean function.
///
/// Stores the raw coefficients `m_l` together with the normalized
/// coefficients `m_l sigma^l / sqrt(l!)` (the Hermite expansion coefficients
/// of the estimator), whose squared sum is `B_c`. For estimator-derived
/// specs, `tail` carries the exact Parseval remainder beyond the truncation:
/// discontinuous estimators such as hard thresholding have only polynomially
/// decaying coefficients, so the truncated sum alone cannot reach the
/// documented B_c accuracy.
#[derive(Debug, Clone)]
pub struct DiagonalBiasSpec {
    m: Vec<f64>,
    normalized: Vec<f64>,
    tail: f64,
    sigma2: f64,
    pub source: CoefficientSource,
}

/// Iterative scale factors `s_l = sigma^l / sqrt(l!)`.
fn scale_factors(sigma: f64, len: usize) -> Vec<f64> {
    let mut s = Vec::with_capacity(len);
    let mut cur = 1.0;
    for l in 0..len {
        if l > 0 {
            cur *= sigma / (l as f64).sqrt();
        }
        s.push(cur);
    }
    s
}

impl DiagonalBiasSpec {
    /// Builds a spec from explicit power-series coefficients `m_l`.
    pub fn explicit(m: Vec<f64>, sigma2: f64) -> Result<Self, SsnmError> {
        if m.is_empty() {
            return Err(SsnmError::InvalidBias("empty coefficient sequence".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(SsnmError::InvalidBias("non-finite coefficient".into()));
        }
        let scales = scale_factors(sigma2.sqrt(), m.len());
        let normalized: Vec<f64> = m.iter().zip(&scales).map(|(&ml, &sl)| ml * sl).collect();
        if normalized.iter().any(|v| !v.is_finite()) {
            return Err(SsnmError::InvalidBias("B_c terms overflow".into()));
        }
        Ok(Self {
            m,
            normalized,
            tail: 0.0,
            sigma2,
            source: CoefficientSource::Explicit,
        })
    }

    /// Expands the actual mean function of a diagonal estimator around `x0k`,
    /// with an exact Parseval tail correction from the estimator's
    /// closed-form second moment.
    pub fn from_estimator(
        est: &DiagonalEstimator,
        x0k: f64,
        sigma2: f64,
        l_max: usize,
    ) -> Result<Self, SsnmError> {
        let mut l_max = l_max.max(4);
        let mut normalized;
        loop {
            normalized = normalized_coefficients(est, x0k, sigma2, l_max)?;
            let total: f64 = normalized.iter().map(|c| c * c).sum();
            let tail_block: f64 = normalized.iter().rev().take(4).map(|c| c * c).sum();
            if tail_block <= 1e-12 * total || l_max >= 256 {
                break;
            }
            l_max = (l_max * 2).min(256);
        }
        let (mean, variance) = est.moments(x0k, sigma2);
        if !(mean.is_finite() && variance.is_finite()) {
            return Err(SsnmError::InvalidEstimator("non-finite moments".into()));
        }
        let second_moment = variance + mean * mean;
        let partial: f64 = normalized.iter().map(|c| c * c).sum();
        let tail = (second_moment - partial).max(0.0);
        let scales = scale_factors(sigma2.sqrt(), normalized.len());
        let m: Vec<f64> = normalized
            .iter()
            .zip(&scales)
            .map(|(&cl, &sl)| if cl == 0.0 { 0.0 } else { cl / sl })
            .collect();
        if m.iter().any(|v| !v.is_finite()) {
            return Err(SsnmError::InvalidBias("coefficient overflow in rescaling".into()));
        }
        Ok(Self {
            m,
            normalized,
            tail,
            sigma2,
            source: CoefficientSource::FromDiagonalEstimator,
        })
    }

    /// Raw power-series coefficients `m_l`, `l = 0..=L_max`.
    pub fn coefficients(&self) -> &[f64] {
        &self.m
    }

    /// `B_c = sum_l m_l^2 sigma^{2l} / l!` including the tail correction.
    pub fn b_c(&self) -> f64 {
        self.normalized.iter().map(|c| c * c).sum::<f64>() + self.tail
    }

    /// Prescribed mean at the anchor, `gamma(x0) = m_0`.
    pub fn gamma_x0(&self) -> f64 {
        self.m[0]
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// Hermite expansion coefficients `c_l = <x_hat, h^(l)> = m_l sigma^l / sqrt(l!)`
/// by adaptive quadrature over 12 standard deviations.
fn normalized_coefficients(
    est: &DiagonalEstimator,
    x0k: f64,
    sigma2: f64,
    l_max: usize,
) -> Result<Vec<f64>, SsnmError> {
    let sigma = sigma2.sqrt();
    let breakpoints: Vec<f64> = est
        .breakpoints()
        .iter()
        .map(|&b| (b - x0k) / sigma)
        .collect();
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    let mut out = Vec::with_capacity(l_max + 1);
    for l in 0..=l_max {
        let integrand = |z: f64| {
            est.apply(x0k + sigma * z) * hermite_normalized(l, z).unwrap() * (-0.5 * z * z).exp()
                / sqrt_2pi
        };
        out.push(quad::integrate_with_breakpoints(
            &integrand,
            -12.0,
            12.0,
            &breakpoints,
            1e-12,
        )?);
    }
    Ok(out)
}

/// Power-series coefficients `m_l` of the estimator's mean function
/// around `x0k` (the Gaussian-weighted Hermite projections).
pub fn ml_coefficients(
    est: &DiagonalEstimator,
    x0k: f64,
    sigma2: f64,
    l_max: usize,
) -> Result<Vec<f64>, SsnmError> {
    let normalized = normalized_coefficients(est, x0k, sigma2, l_max)?;
    let scales = scale_factors(sigma2.sqrt(), normalized.len());
    let m: Vec<f64> = normalized
        .iter()
        .zip(&scales)
        .map(|(&cl, &sl)| if cl == 0.0 { 0.0 } else { cl / sl })
        .collect();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SsnmError::InvalidBias("coefficient overflow in rescaling".into()));
    }
    Ok(m)
}

/// Exact Barankin bound for a diagonal bias, `M = B_c phi(x0) - gamma^2(x0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarankinResult {
    pub value: f64,
    pub phi: f64,
    pub b_c: f64,
    pub gamma_x0: f64,
    /// Set when a (numerically or structurally) negative value was clamped.
    pub clamped: bool,
}

fn assemble(b_c: f64, phi: f64, gamma_x0: f64) -> BarankinResult {
    let raw = b_c * phi - gamma_x0 * gamma_x0;
    BarankinResult {
        value: raw.max(0.0),
        phi,
        b_c,
        gamma_x0,
        clamped: raw < 0.0,
    }
}

pub fn barankin_diag(
    bias: &DiagonalBiasSpec,
    x0: &ParamVector,
    k: usize,
    s: usize,
    sigma2: f64,
) -> Result<BarankinResult, SsnmError> {
    if (bias.sigma2() - sigma2).abs() > 1e-12 * sigma2 {
        return Err(SsnmError::SigmaMismatch {
            expected: bias.sigma2(),
            got: sigma2,
        });
    }
    let b_c = bias.b_c();
    if !b_c.is_finite() {
        return Err(SsnmError::InvalidBias("divergent B_c".into()));
    }
    Ok(assemble(b_c, phi_factor(x0, k, s, sigma2), bias.gamma_x0()))
}

/// Barankin bound for the actual bias of a diagonal estimator:
/// `M = v(x0) phi(x0) + [phi(x0) - 1] gamma^2(x0)` using exact moments.
pub fn barankin_from_estimator(
    est: &DiagonalEstimator,
    x0: &ParamVector,
    k: usize,
    s: usize,
    sigma2: f64,
) -> Result<BarankinResult, SsnmError> {
    let (mean, variance) = est.moments(x0.vector()[k], sigma2);
    if !(mean.is_finite() && variance.is_finite()) {
        return Err(SsnmError::InvalidEstimator("non-finite moments".into()));
    }
    let phi = phi_factor(x0, k, s, sigma2);
    Ok(assemble(variance + mean * mean, phi, mean))
}

/// LMV estimate for the bias of `est` at anchor `x0`:
/// the estimator output times the correction factor `psi`.
pub fn lmv_estimate(
    est: &DiagonalEstimator,
    y: &DVector<f64>,
    x0: &ParamVector,
    k: usize,
    s: usize,
    sigma2: f64,
) -> f64 {
    est.apply(y[k]) * psi_factor(y, x0, k, s, sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{hard_threshold, ht_moments};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn hermite_low_orders() {
        for &x in &[-2.0, 0.0, 0.7, 3.0] {
            assert_eq!(hermite(0, x).unwrap(), 1.0);
            assert_eq!(hermite(1, x).unwrap(), x);
            assert_abs_diff_eq!(hermite(2, x).unwrap(), x * x - 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(hermite(3, x).unwrap(), x * x * x - 3.0 * x, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(hermite(2, 3.0).unwrap(), 8.0);
    }

    /// Derivative definition (-1)^l e^{x^2/2} d^l/dx^l e^{-x^2/2}, realized
    /// by symbolic differentiation: if f = p(x) e^{-x^2/2} then
    /// f' = (p' - x p) e^{-x^2/2}, tracked on polynomial coefficients.
    fn hermite_derivative_oracle(l: usize, x: f64) -> f64 {
        let mut p = vec![1.0f64];
        for _ in 0..l {
            let mut next = vec![0.0; p.len() + 1];
            for (i, &c) in p.iter().enumerate() {
                if i >= 1 {
                    next[i - 1] += c * i as f64;
                }
                next[i + 1] -= c;
            }
            p = next;
        }
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        sign * p.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    #[test]
    fn hermite_matches_derivative_definition() {
        for l in 0..=8 {
            for &x in &[-1.3, 0.4, 1.7] {
                let oracle = hermite_derivative_oracle(l, x);
                let got = hermite(l, x).unwrap();
                let scale = got.abs().max(1.0);
                assert!(
                    (got - oracle).abs() < 1e-8 * scale,
                    "l={l} x={x} got={got} oracle={oracle}"
                );
            }
        }
    }

    #[test]
    fn hermite_guard() {
        assert!(matches!(hermite(501, 0.0), Err(SsnmError::OrderTooLarge(501))));
        assert!(hermite(500, 0.3).is_ok());
    }

    #[test]
    fn hermite_normalized_consistent() {
        for l in 0..=20 {
            let factorial: f64 = (1..=l).map(|j| j as f64).product();
            for &x in &[-1.0, 0.5, 2.0] {
                assert_abs_diff_eq!(
                    hermite_normalized(l, x).unwrap(),
                    hermite(l, x).unwrap() / factorial.sqrt(),
                    epsilon = 1e-9 * hermite_normalized(l, x).unwrap().abs().max(1.0)
                );
            }
        }
    }

    #[test]
    fn phi_first_case_and_bounds() {
        let x0 = ParamVector::from_slice(&[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(phi_factor(&x0, 3, 3, 1.0), 1.0);
        assert_eq!(phi_factor(&x0, 0, 2, 1.0), 1.0);
        let phi = phi_factor(&x0, 3, 2, 1.0);
        assert!(phi > 0.0 && phi < 1.0);
    }

    #[test]
    fn phi_single_support_value() {
        // S=1, x0 = sigma e_1, k = 2: phi = exp(-1)
        let x0 = ParamVector::from_slice(&[1.0, 0.0]);
        assert_abs_diff_eq!(phi_factor(&x0, 1, 1, 1.0), (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn phi_continuity_into_first_case() {
        let mut last = 0.0;
        for &eps in &[1.0, 0.1, 0.01, 1e-3, 1e-4] {
            let x0 = ParamVector::from_slice(&[eps, 2.0 * eps, 0.0]);
            last = phi_factor(&x0, 2, 2, 1.0);
        }
        assert!((last - 1.0).abs() < 1e-6);
    }

    #[test]
    fn phi_matches_complement_product_form() {
        // the ordered sum telescopes to 1 - prod(1 - a_i), so the ordering
        // convention cannot change the value
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..20 {
            let mut x = vec![0.0; 6];
            for i in 0..3 {
                x[i] = rng.sample::<f64, _>(StandardNormal);
            }
            let x0 = ParamVector::from_slice(&x);
            if x0.sparsity() != 3 {
                continue;
            }
            let phi = phi_factor(&x0, 5, 3, 0.8);
            let prod: f64 = x0
                .support()
                .iter()
                .map(|&i| 1.0 - (-x0.vector()[i] * x0.vector()[i] / 0.8).exp())
                .product();
            assert_abs_diff_eq!(phi, 1.0 - prod, epsilon = 1e-13);
        }
    }

    #[test]
    fn psi_ignores_target_entry() {
        let x0 = ParamVector::from_slice(&[1.0, -2.0, 0.0]);
        let mut y = DVector::from_column_slice(&[0.3, 0.9, 5.0]);
        let a = psi_factor(&y, &x0, 2, 2, 1.0);
        y[2] = -100.0;
        assert_eq!(psi_factor(&y, &x0, 2, 2, 1.0), a);
    }

    #[test]
    fn psi_mean_matches_phi() {
        let x0 = ParamVector::from_slice(&[1.2, -0.7, 0.0, 0.0]);
        let (k, s, sigma2) = (2usize, 2usize, 1.0);
        let phi = phi_factor(&x0, k, s, sigma2);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = 400_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..trials {
            let y = DVector::from_fn(4, |i, _| {
                x0.vector()[i] + rng.sample::<f64, _>(StandardNormal)
            });
            let p = psi_factor(&y, &x0, k, s, sigma2);
            sum += p;
            sumsq += p * p;
        }
        let mean = sum / trials as f64;
        let var = (sumsq / trials as f64 - mean * mean).max(0.0);
        let se = (var / trials as f64).sqrt();
        assert!((mean - phi).abs() < 3.0 * se, "mean {mean} phi {phi} se {se}");
    }

    #[test]
    fn ml_coefficients_ls() {
        let m = ml_coefficients(&DiagonalEstimator::Identity, 1.3, 1.0, 6).unwrap();
        assert_abs_diff_eq!(m[0], 1.3, epsilon = 1e-10);
        assert_abs_diff_eq!(m[1], 1.0, epsilon = 1e-10);
        for &ml in &m[2..] {
            assert_abs_diff_eq!(ml, 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn ml_coefficients_constant() {
        let m = ml_coefficients(&DiagonalEstimator::Constant(2.5), -0.4, 0.9, 6).unwrap();
        assert_abs_diff_eq!(m[0], 2.5, epsilon = 1e-10);
        for &ml in &m[1..] {
            assert_abs_diff_eq!(ml, 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn parseval_identity_ls_and_ht() {
        for est in [DiagonalEstimator::Identity, hard_threshold(2.0)] {
            let (x0k, sigma2) = (1.0, 1.0);
            let spec = DiagonalBiasSpec::from_estimator(&est, x0k, sigma2, 64).unwrap();
            let (mean, var) = est.moments(x0k, sigma2);
            assert_abs_diff_eq!(spec.b_c(), var + mean * mean, epsilon = 1e-8);
            assert_abs_diff_eq!(spec.gamma_x0(), mean, epsilon = 1e-9);
        }
    }

    #[test]
    fn ht_coefficient_truncation_is_slow_without_tail() {
        // the discontinuity makes the truncated Parseval sum visibly short;
        // this pins down why the tail correction exists
        let spec = DiagonalBiasSpec::from_estimator(&hard_threshold(2.0), 1.0, 1.0, 64).unwrap();
        assert!(spec.tail() > 1e-6);
        let (mean, var) = ht_moments(2.0, 1.0, 1.0);
        let partial = spec.b_c() - spec.tail();
        assert!(partial < var + mean * mean);
        assert!(partial > 0.9 * (var + mean * mean));
    }

    #[test]
    fn barankin_unbiased_first_case() {
        // gamma(x) = x_k: m_0 = x0k, m_1 = 1
        let sigma2 = 1.0;
        let spec = DiagonalBiasSpec::explicit(vec![0.7, 1.0], sigma2).unwrap();
        let x0 = ParamVector::from_slice(&[0.7, 0.0, 0.0]);
        let r = barankin_diag(&spec, &x0, 0, 2, sigma2).unwrap();
        assert_abs_diff_eq!(r.b_c, 0.7 * 0.7 + sigma2, epsilon = 1e-14);
        assert_abs_diff_eq!(r.value, sigma2, epsilon = 1e-12);
    }

    #[test]
    fn barankin_unbiased_second_case() {
        // S=1, x0 = a e_1, k=2: M = sigma^2 exp(-a^2/sigma^2)
        let sigma2 = 1.0;
        let a = 1.4;
        let spec = DiagonalBiasSpec::explicit(vec![0.0, 1.0], sigma2).unwrap();
        let x0 = ParamVector::from_slice(&[a, 0.0]);
        let r = barankin_diag(&spec, &x0, 1, 1, sigma2).unwrap();
        assert_abs_diff_eq!(r.value, sigma2 * (-a * a / sigma2).exp(), epsilon = 1e-12);
    }

    #[test]
    fn barankin_constant_mean_is_zero() {
        let spec = DiagonalBiasSpec::explicit(vec![3.0], 1.0).unwrap();
        let x0 = ParamVector::from_slice(&[0.5, 0.0]);
        let r = barankin_diag(&spec, &x0, 0, 1, 1.0).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn barankin_from_estimator_matches_coefficients() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..10 {
            let t = rng.gen_range(0.5..3.0);
            let x0k = rng.gen_range(-2.0..2.0);
            let sigma2 = rng.gen_range(0.5..1.5);
            let est = hard_threshold(t);
            let mut x = vec![0.0; 4];
            x[0] = x0k;
            x[1] = rng.gen_range(0.5..2.0);
            let x0 = ParamVector::from_slice(&x);
            let k = 0;
            let s = 2;
            let from_est = barankin_from_estimator(&est, &x0, k, s, sigma2).unwrap();
            let spec = DiagonalBiasSpec::from_estimator(&est, x0k, sigma2, 64).unwrap();
            let from_coeffs = barankin_diag(&spec, &x0, k, s, sigma2).unwrap();
            let scale = from_est.value.abs().max(1e-12);
            assert!(
                (from_est.value - from_coeffs.value).abs() < 1e-6 * scale,
                "t={t} x0k={x0k} est {} coeffs {}",
                from_est.value,
                from_coeffs.value
            );
        }
    }

    #[test]
    fn barankin_ls_first_case_is_sigma2() {
        let sigma2 = 1.7;
        let x0 = ParamVector::from_slice(&[2.0, 0.0, 0.0]);
        let r = barankin_from_estimator(&DiagonalEstimator::Identity, &x0, 0, 2, sigma2).unwrap();
        assert_abs_diff_eq!(r.value, sigma2, epsilon = 1e-12);
    }

    #[test]
    fn barankin_ht_zero_threshold_is_ls() {
        let x0 = ParamVector::from_slice(&[1.0, 0.5, 0.0]);
        let a = barankin_from_estimator(&hard_threshold(0.0), &x0, 2, 2, 1.0).unwrap();
        let b = barankin_from_estimator(&DiagonalEstimator::Identity, &x0, 2, 2, 1.0).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn barankin_second_case_strictly_improves() {
        let x0 = ParamVector::from_slice(&[2.0, 1.0, 0.0, 0.0]);
        let (k, s, sigma2) = (3usize, 2usize, 1.0);
        let est = hard_threshold(3.0);
        let r = barankin_from_estimator(&est, &x0, k, s, sigma2).unwrap();
        let (_, var) = est.moments(0.0, sigma2);
        assert!(r.phi < 1.0);
        assert!(r.value < var);
    }

    #[test]
    fn sparsity_gain_nonnegative() {
        // M with phi = 1 (non-sparse) minus M with sparsity equals B_c (1 - phi)
        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..10 {
            let mut x = vec![0.0; 5];
            for i in 0..2 {
                x[i] = rng.gen_range(-2.0..2.0f64).max(0.1);
            }
            let x0 = ParamVector::from_slice(&x);
            let est = hard_threshold(rng.gen_range(0.0..3.0));
            let r = barankin_from_estimator(&est, &x0, 4, 2, 1.0).unwrap();
            let nonsparse = r.b_c - r.gamma_x0 * r.gamma_x0;
            assert!(nonsparse + 1e-12 >= r.value);
            assert_abs_diff_eq!(nonsparse - (r.b_c * r.phi - r.gamma_x0 * r.gamma_x0), r.b_c * (1.0 - r.phi), epsilon = 1e-10);
        }
    }

    #[test]
    fn lmv_reduces_to_estimator_in_first_case() {
        let est = hard_threshold(1.5);
        let x0 = ParamVector::from_slice(&[1.0, 0.0, 0.0]);
        let y = DVector::from_column_slice(&[0.4, 2.0, -1.0]);
        assert_eq!(lmv_estimate(&est, &y, &x0, 0, 2, 1.0), est.apply(0.4));
    }

    #[test]
    fn lmv_bias_and_variance_match_exact_values() {
        // MC check in the second case (k off-support): the LMV second moment
        // equals B_c phi and its mean equals gamma(x0) phi. The psi factor is
        // heavy-tailed, so both tolerances use empirical standard errors.
        let sigma2 = 1.0;
        let t = 1.0;
        let est = hard_threshold(t);
        let x0 = ParamVector::from_slice(&[0.8, -0.6, 0.0, 0.0]);
        let (k, s) = (3usize, 2usize);
        let exact = barankin_from_estimator(&est, &x0, k, s, sigma2).unwrap();
        // gamma(x0) = 0 here (x0_k = 0, HT mean odd), so M = B_c phi exactly
        assert_abs_diff_eq!(exact.gamma_x0, 0.0, epsilon = 1e-14);
        let target_m2 = exact.b_c * exact.phi;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 400_000;
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for _ in 0..trials {
            let y = DVector::from_fn(4, |i, _| {
                x0.vector()[i] + rng.sample::<f64, _>(StandardNormal)
            });
            let v = lmv_estimate(&est, &y, &x0, k, s, sigma2);
            s1 += v;
            s2 += v * v;
            s4 += v * v * v * v;
        }
        let n = trials as f64;
        let mean = s1 / n;
        let m2 = s2 / n;
        let se_mean = ((m2 - mean * mean).max(0.0) / n).sqrt();
        let se_m2 = ((s4 / n - m2 * m2).max(0.0) / n).sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean} se {se_mean}");
        assert!(
            (m2 - target_m2).abs() < 3.0 * se_m2,
            "second moment {m2} vs {target_m2} se {se_m2}"
        );
        // and the closed-form variance is the same quantity here
        assert_abs_diff_eq!(exact.value, target_m2, epsilon = 1e-12);
    }

    #[test]
    fn explicit_spec_rejects_bad_input() {
        assert!(DiagonalBiasSpec::explicit(vec![], 1.0).is_err());
        assert!(DiagonalBiasSpec::explicit(vec![1.0, f64::NAN], 1.0).is_err());
    }

    #[test]
    fn sigma_mismatch_rejected() {
        let spec = DiagonalBiasSpec::explicit(vec![0.0, 1.0], 1.0).unwrap();
        let x0 = ParamVector::from_slice(&[1.0, 0.0]);
        assert!(matches!(
            barankin_diag(&spec, &x0, 1, 1, 2.0),
            Err(SsnmError::SigmaMismatch { .. })
        ));
    }
}
