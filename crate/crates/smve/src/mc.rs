//! Seeded, parallel Monte Carlo engine.
//!
//! Determinism: trial `i` draws its noise from an independent ChaCha stream
//! keyed by `(seed, i)`, and trials are accumulated in fixed-size chunks that
//! are reduced in chunk order. Results are therefore bit-identical for a
//! given `(seed, trials)` regardless of the worker count.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::estimators::VectorEstimator;
use crate::model::SparseProblem;

const CHUNK: usize = 1024;
const MAX_FAILURE_FRACTION: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid Monte Carlo config: {0}")]
    InvalidConfig(String),
    #[error("{failures} of {trials} trials failed (limit {limit})")]
    TooManyFailures {
        failures: usize,
        trials: usize,
        limit: usize,
    },
    #[error("thread pool construction failed: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub seed: u64,
    pub trials: usize,
    pub workers: usize,
}

impl McConfig {
    /// Workers default to `SMVE_WORKERS` when set, otherwise the rayon default.
    pub fn new(seed: u64, trials: usize) -> Self {
        let workers = std::env::var("SMVE_WORKERS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&w| w > 0)
            .unwrap_or_else(rayon::current_num_threads);
        Self { seed, trials, workers }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

/// Componentwise sample moments with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct McMoments {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub se_mean: DVector<f64>,
    pub se_variance: DVector<f64>,
    pub trials: usize,
    pub failures: usize,
}

impl McMoments {
    /// Total variance, the sum over components.
    pub fn total_variance(&self) -> f64 {
        self.variance.sum()
    }

    /// Standard error of the total variance (components independent given
    /// independent noise entries is not assumed; this is the conservative
    /// root-sum-square combination).
    pub fn total_variance_se(&self) -> f64 {
        self.se_variance.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

fn check_cfg(cfg: &McConfig) -> Result<(), McError> {
    if cfg.trials < 2 {
        return Err(McError::InvalidConfig(format!("trials = {} < 2", cfg.trials)));
    }
    if cfg.workers == 0 {
        return Err(McError::InvalidConfig("workers = 0".into()));
    }
    Ok(())
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_add(1));
    rng
}

fn draw_noise(rng: &mut ChaCha8Rng, m: usize, sigma: f64) -> DVector<f64> {
    DVector::from_fn(m, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    })
}

/// Runs chunked trials in a bounded pool, merging chunk accumulators in
/// fixed chunk order.
fn chunked_run<A, F>(cfg: &McConfig, per_chunk: F) -> Result<Vec<A>, McError>
where
    A: Send,
    F: Fn(std::ops::Range<usize>) -> A + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| McError::Pool(e.to_string()))?;
    let ranges: Vec<std::ops::Range<usize>> = (0..cfg.trials)
        .step_by(CHUNK)
        .map(|start| start..(start + CHUNK).min(cfg.trials))
        .collect();
    Ok(pool.install(|| ranges.into_par_iter().map(per_chunk).collect()))
}

struct MomentChunk {
    s1: DVector<f64>,
    s2: DVector<f64>,
    s3: DVector<f64>,
    s4: DVector<f64>,
    count: usize,
    failures: usize,
}

/// Sample mean/variance of `est` on `y = H x0 + n`, `n ~ N(0, sigma2 I)`.
pub fn simulate(
    est: &VectorEstimator,
    problem: &SparseProblem,
    x0: &DVector<f64>,
    cfg: &McConfig,
) -> Result<McMoments, McError> {
    check_cfg(cfg)?;
    let model = &problem.model;
    let n = model.ncols();
    let m = model.nrows();
    let sigma = model.sigma2().sqrt();
    let hx0 = model.h() * x0;

    let chunks = chunked_run(cfg, |range| {
        let mut acc = MomentChunk {
            s1: DVector::zeros(n),
            s2: DVector::zeros(n),
            s3: DVector::zeros(n),
            s4: DVector::zeros(n),
            count: 0,
            failures: 0,
        };
        for trial in range {
            let mut rng = trial_rng(cfg.seed, trial as u64);
            let y = &hx0 + draw_noise(&mut rng, m, sigma);
            match est.estimate(&y) {
                Ok(xh) => {
                    for i in 0..n {
                        let v = xh[i];
                        let v2 = v * v;
                        acc.s1[i] += v;
                        acc.s2[i] += v2;
                        acc.s3[i] += v2 * v;
                        acc.s4[i] += v2 * v2;
                    }
                    acc.count += 1;
                }
                Err(_) => acc.failures += 1,
            }
        }
        acc
    })?;

    let mut s1 = DVector::zeros(n);
    let mut s2 = DVector::zeros(n);
    let mut s3 = DVector::zeros(n);
    let mut s4 = DVector::zeros(n);
    let mut count = 0usize;
    let mut failures = 0usize;
    for c in chunks {
        s1 += c.s1;
        s2 += c.s2;
        s3 += c.s3;
        s4 += c.s4;
        count += c.count;
        failures += c.failures;
    }
    let limit = ((cfg.trials as f64) * MAX_FAILURE_FRACTION).ceil() as usize;
    if failures > limit {
        return Err(McError::TooManyFailures {
            failures,
            trials: cfg.trials,
            limit,
        });
    }
    if count < 2 {
        return Err(McError::InvalidConfig("fewer than 2 successful trials".into()));
    }

    let nf = count as f64;
    let mut mean = DVector::zeros(n);
    let mut variance = DVector::zeros(n);
    let mut se_mean = DVector::zeros(n);
    let mut se_variance = DVector::zeros(n);
    for i in 0..n {
        let mu = s1[i] / nf;
        let m2 = (s2[i] / nf - mu * mu).max(0.0);
        let m3 = s3[i] / nf - 3.0 * mu * s2[i] / nf + 2.0 * mu * mu * mu;
        let m4 = (s4[i] / nf - 4.0 * mu * s3[i] / nf + 6.0 * mu * mu * s2[i] / nf
            - 3.0 * mu * mu * mu * mu)
            .max(0.0);
        let _ = m3;
        let s2_unbiased = m2 * nf / (nf - 1.0);
        mean[i] = mu;
        variance[i] = s2_unbiased;
        se_mean[i] = (s2_unbiased / nf).sqrt();
        // Var(s^2) ~ (m4 - (n-3)/(n-1) s^4) / n
        let var_s2 = ((m4 - (nf - 3.0) / (nf - 1.0) * s2_unbiased * s2_unbiased) / nf).max(0.0);
        se_variance[i] = var_s2.sqrt();
    }
    Ok(McMoments {
        mean,
        variance,
        se_mean,
        se_variance,
        trials: count,
        failures,
    })
}

/// Monte Carlo estimate of the full bias-gradient matrix
/// `G[k][l] = d c_k / d x_l` at `x0`, with per-entry standard errors.
///
/// Uses the score identity `d E{x_hat_k} / d x_l = E{x_hat_k (H^T n)_l} / sigma^2`
/// in covariance form (mean-centering `x_hat_k`), which removes the
/// `E{x_hat_k} E{(H^T n)_l}` noise floor at high SNR; then
/// `d c_k / d x_l = d E{x_hat_k}/d x_l - delta_{k,l}`.
#[derive(Debug, Clone)]
pub struct BiasGradient {
    pub value: DMatrix<f64>,
    pub se: DMatrix<f64>,
    pub trials: usize,
}

struct GradientChunk {
    sx: DVector<f64>,
    sw: DVector<f64>,
    sw2: DVector<f64>,
    sxw: DMatrix<f64>,
    sxw2: DMatrix<f64>,
    sx2w2: DMatrix<f64>,
    count: usize,
    failures: usize,
}

pub fn bias_gradient_matrix(
    est: &VectorEstimator,
    problem: &SparseProblem,
    x0: &DVector<f64>,
    cfg: &McConfig,
) -> Result<BiasGradient, McError> {
    check_cfg(cfg)?;
    let model = problem.model.clone();
    let n = model.ncols();
    let m = model.nrows();
    let sigma2 = model.sigma2();
    let sigma = sigma2.sqrt();
    let hx0 = model.h() * x0;

    let chunks = chunked_run(cfg, |range| {
        let mut acc = GradientChunk {
            sx: DVector::zeros(n),
            sw: DVector::zeros(n),
            sw2: DVector::zeros(n),
            sxw: DMatrix::zeros(n, n),
            sxw2: DMatrix::zeros(n, n),
            sx2w2: DMatrix::zeros(n, n),
            count: 0,
            failures: 0,
        };
        for trial in range {
            let mut rng = trial_rng(cfg.seed, trial as u64);
            let noise = draw_noise(&mut rng, m, sigma);
            let y = &hx0 + &noise;
            match est.estimate(&y) {
                Ok(xh) => {
                    let w = model.h().transpose() * &noise;
                    for k in 0..n {
                        let xk = xh[k];
                        acc.sx[k] += xk;
                        for l in 0..n {
                            let wl = w[l];
                            acc.sxw[(k, l)] += xk * wl;
                            acc.sxw2[(k, l)] += xk * wl * wl;
                            acc.sx2w2[(k, l)] += xk * xk * wl * wl;
                        }
                    }
                    for l in 0..n {
                        acc.sw[l] += w[l];
                        acc.sw2[l] += w[l] * w[l];
                    }
                    acc.count += 1;
                }
                Err(_) => acc.failures += 1,
            }
        }
        acc
    })?;

    let mut acc = GradientChunk {
        sx: DVector::zeros(n),
        sw: DVector::zeros(n),
        sw2: DVector::zeros(n),
        sxw: DMatrix::zeros(n, n),
        sxw2: DMatrix::zeros(n, n),
        sx2w2: DMatrix::zeros(n, n),
        count: 0,
        failures: 0,
    };
    for c in chunks {
        acc.sx += c.sx;
        acc.sw += c.sw;
        acc.sw2 += c.sw2;
        acc.sxw += c.sxw;
        acc.sxw2 += c.sxw2;
        acc.sx2w2 += c.sx2w2;
        acc.count += c.count;
        acc.failures += c.failures;
    }
    let limit = ((cfg.trials as f64) * MAX_FAILURE_FRACTION).ceil() as usize;
    if acc.failures > limit {
        return Err(McError::TooManyFailures {
            failures: acc.failures,
            trials: cfg.trials,
            limit,
        });
    }
    if acc.count < 2 {
        return Err(McError::InvalidConfig("fewer than 2 successful trials".into()));
    }

    let nf = acc.count as f64;
    let mut value = DMatrix::zeros(n, n);
    let mut se = DMatrix::zeros(n, n);
    for k in 0..n {
        let mu_x = acc.sx[k] / nf;
        for l in 0..n {
            let cov = acc.sxw[(k, l)] / nf - mu_x * acc.sw[l] / nf;
            // variance of the centered product p = (x_hat_k - mu_x) w_l
            let ep2 = acc.sx2w2[(k, l)] / nf - 2.0 * mu_x * acc.sxw2[(k, l)] / nf
                + mu_x * mu_x * acc.sw2[l] / nf;
            let var_p = (ep2 - cov * cov).max(0.0);
            let delta = if k == l { 1.0 } else { 0.0 };
            value[(k, l)] = cov / sigma2 - delta;
            se[(k, l)] = (var_p / nf).sqrt() / sigma2;
        }
    }
    Ok(BiasGradient {
        value,
        se,
        trials: acc.count,
    })
}

/// Single bias-gradient entry `d c_k / d x_l` with its standard error.
pub fn bias_gradient_mc(
    est: &VectorEstimator,
    problem: &SparseProblem,
    x0: &DVector<f64>,
    k: usize,
    l: usize,
    cfg: &McConfig,
) -> Result<(f64, f64), McError> {
    let g = bias_gradient_matrix(est, problem, x0, cfg)?;
    Ok((g.value[(k, l)], g.se[(k, l)]))
}

/// Finite-difference bias gradient `d c_k / d x_l` from a mean function
/// `x -> E_x{x_hat_k}` (exact or MC-backed): forward difference of the mean,
/// minus the identity term `delta_{k,l}`.
pub fn bias_gradient_fd<F: Fn(&DVector<f64>) -> f64>(
    mean_fn: F,
    x0: &DVector<f64>,
    k: usize,
    l: usize,
    step: f64,
) -> f64 {
    let mut xp = x0.clone();
    xp[l] += step;
    let delta = if k == l { 1.0 } else { 0.0 };
    (mean_fn(&xp) - mean_fn(x0)) / step - delta
}
