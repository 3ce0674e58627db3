//! Closed-form lower variance bounds for the sparse linear Gaussian model:
//! the sparse CRB, the two projection bounds, their RIP and coherence
//! specializations, and the HCRB-type bound for the SSNM.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::estimators::{DiagonalEstimator, VectorEstimator};
use crate::mc::{self, BiasGradient, McConfig, McMoments};
use crate::model::{select_columns, rank_threshold, ModelError, SparseProblem};
use crate::ssnm_exact;
use crate::ParamVector;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("scalar bound requires a target component index k")]
    MissingTarget,
    #[error("bias gradient unavailable: {0}")]
    GradientUnavailable(String),
    #[error("selected column submatrix is rank-deficient")]
    SingularSubmatrix,
    #[error("RIP constant {0} is not in [0, 1)")]
    InvalidRip(f64),
    #[error("bound requires H = I")]
    WrongModel,
    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),
    #[error("parameter not S-sparse: ||x0||_0 = {got} > S = {s}")]
    NotSparse { got: usize, s: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("Monte Carlo failure: {0}")]
    Mc(#[from] mc::McError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradProvenance {
    Analytic,
    FiniteDifference,
    MonteCarlo,
}

type MeanFn = dyn Fn(&DVector<f64>) -> Result<(f64, f64), BoundsError> + Send + Sync;
type GradFn = dyn Fn(&DVector<f64>, &[usize]) -> Result<(Vec<f64>, Vec<f64>), BoundsError> + Send + Sync;

/// Prescribed bias for one target component: the bias value `c(x)` and its
/// partial derivatives, each with a standard error (zero when analytic).
#[derive(Clone)]
pub struct BiasSpec {
    c: Arc<MeanFn>,
    grad: Arc<GradFn>,
    pub provenance: GradProvenance,
}

impl std::fmt::Debug for BiasSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BiasSpec").field("provenance", &self.provenance).finish()
    }
}

impl BiasSpec {
    pub fn unbiased() -> Self {
        Self {
            c: Arc::new(|_| Ok((0.0, 0.0))),
            grad: Arc::new(|_, idx| Ok((vec![0.0; idx.len()], vec![0.0; idx.len()]))),
            provenance: GradProvenance::Analytic,
        }
    }

    pub fn analytic<C, G>(c: C, grad: G) -> Self
    where
        C: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>, usize) -> f64 + Send + Sync + 'static,
    {
        Self {
            c: Arc::new(move |x| Ok((c(x), 0.0))),
            grad: Arc::new(move |x, idx| {
                let vals: Vec<f64> = idx.iter().map(|&l| grad(x, l)).collect();
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(BoundsError::GradientUnavailable("non-finite gradient".into()));
                }
                let ses = vec![0.0; vals.len()];
                Ok((vals, ses))
            }),
            provenance: GradProvenance::Analytic,
        }
    }

    /// Actual bias of a diagonal estimator applied to component `k` of an
    /// SSNM observation, with exact moments and derivatives.
    pub fn from_diagonal_estimator(est: DiagonalEstimator, k: usize, sigma2: f64) -> Self {
        let est_c = est.clone();
        Self::analytic(
            move |x: &DVector<f64>| est_c.moments(x[k], sigma2).0 - x[k],
            move |x: &DVector<f64>, l: usize| {
                if l == k {
                    est.mean_derivative(x[k], sigma2) - 1.0
                } else {
                    0.0
                }
            },
        )
    }

    fn c(&self, x: &DVector<f64>) -> Result<(f64, f64), BoundsError> {
        (self.c)(x)
    }

    /// `gamma(x) = c(x) + x_k` with its standard error.
    fn gamma(&self, x: &DVector<f64>, k: usize) -> Result<(f64, f64), BoundsError> {
        let (c, se) = self.c(x)?;
        Ok((c + x[k], se))
    }

    fn grad(&self, x: &DVector<f64>, idx: &[usize]) -> Result<(Vec<f64>, Vec<f64>), BoundsError> {
        (self.grad)(x, idx)
    }
}

/// Shared Monte Carlo bias provider for all components of one estimator.
/// Simulations and gradient matrices are cached per evaluation point, so the
/// per-component [`BiasSpec`]s reuse one run per queried `x`.
pub struct McBiasFamily {
    est: VectorEstimator,
    problem: SparseProblem,
    cfg: McConfig,
    moments: Mutex<HashMap<Vec<u64>, Arc<McMoments>>>,
    gradients: Mutex<HashMap<Vec<u64>, Arc<BiasGradient>>>,
}

fn point_key(x: &DVector<f64>) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl McBiasFamily {
    pub fn new(est: VectorEstimator, problem: SparseProblem, cfg: McConfig) -> Arc<Self> {
        Arc::new(Self {
            est,
            problem,
            cfg,
            moments: Mutex::new(HashMap::new()),
            gradients: Mutex::new(HashMap::new()),
        })
    }

    pub fn moments_at(&self, x: &DVector<f64>) -> Result<Arc<McMoments>, BoundsError> {
        let key = point_key(x);
        if let Some(m) = self.moments.lock().unwrap().get(&key) {
            return Ok(m.clone());
        }
        let m = Arc::new(mc::simulate(&self.est, &self.problem, x, &self.cfg)?);
        self.moments.lock().unwrap().insert(key, m.clone());
        Ok(m)
    }

    pub fn gradient_at(&self, x: &DVector<f64>) -> Result<Arc<BiasGradient>, BoundsError> {
        let key = point_key(x);
        if let Some(g) = self.gradients.lock().unwrap().get(&key) {
            return Ok(g.clone());
        }
        let g = Arc::new(mc::bias_gradient_matrix(&self.est, &self.problem, x, &self.cfg)?);
        self.gradients.lock().unwrap().insert(key, g.clone());
        Ok(g)
    }

    /// Bias spec for target component `k`, backed by the shared caches.
    pub fn component(self: &Arc<Self>, k: usize) -> BiasSpec {
        let fam_c = self.clone();
        let fam_g = self.clone();
        BiasSpec {
            c: Arc::new(move |x| {
                let m = fam_c.moments_at(x)?;
                Ok((m.mean[k] - x[k], m.se_mean[k]))
            }),
            grad: Arc::new(move |x, idx| {
                let g = fam_g.gradient_at(x)?;
                let vals = idx.iter().map(|&l| g.value[(k, l)]).collect();
                let ses = idx.iter().map(|&l| g.se[(k, l)]).collect();
                Ok((vals, ses))
            }),
            provenance: GradProvenance::MonteCarlo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    SparseCrb,
    Projection1,
    Projection2,
    RipBound,
    CoherenceBound,
    Hcrb,
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub value: f64,
    pub kind: BoundKind,
    pub index_set: Option<Vec<usize>>,
    /// Exponential factor in (0, 1] where applicable, 1.0 otherwise.
    pub scale_factor: f64,
    /// First-order standard error when the bias is MC-estimated.
    pub grad_error: Option<f64>,
    pub clamped_to_zero: bool,
    pub non_informative: bool,
}

impl BoundReport {
    fn new(value: f64, kind: BoundKind) -> Self {
        Self {
            value,
            kind,
            index_set: None,
            scale_factor: 1.0,
            grad_error: None,
            clamped_to_zero: false,
            non_informative: false,
        }
    }
}

fn target(problem: &SparseProblem) -> Result<usize, BoundsError> {
    problem.k.ok_or(BoundsError::MissingTarget)
}

fn check_sparsity(problem: &SparseProblem, x0: &ParamVector) -> Result<(), BoundsError> {
    if x0.sparsity() > problem.s {
        return Err(BoundsError::NotSparse {
            got: x0.sparsity(),
            s: problem.s,
        });
    }
    Ok(())
}

fn se_opt(provenance: GradProvenance, se: f64) -> Option<f64> {
    match provenance {
        GradProvenance::Analytic => None,
        _ => Some(se),
    }
}

/// Sparse CRB (the Cramér-Rao-type bound on the sparse parameter set).
///
/// For `||x0||_0 <= S - 1` the full gradient over `[N]` enters through
/// `sigma^2 b^T (H^T H)^dagger b`; at `||x0||_0 = S` both `b` and `H` are
/// restricted to the support of `x0`.
pub fn sparse_crb(
    problem: &SparseProblem,
    bias: &BiasSpec,
    x0: &ParamVector,
) -> Result<BoundReport, BoundsError> {
    let k = target(problem)?;
    check_sparsity(problem, x0)?;
    let model = &problem.model;
    let sigma2 = model.sigma2();
    let n = model.ncols();

    let (indices, quad, se) = if x0.sparsity() < problem.s {
        let idx: Vec<usize> = (0..n).collect();
        let (grad, grad_se) = bias.grad(x0.vector(), &idx)?;
        let b = DVector::from_fn(n, |l, _| if l == k { 1.0 } else { 0.0 } + grad[l]);
        let ab = model.svd().gram_pinv_mul(&b);
        let quad = b.dot(&ab);
        // first-order propagation: d(b^T A b) = 2 (A b)_i db_i
        let se = 2.0
            * sigma2
            * ab.iter()
                .zip(&grad_se)
                .map(|(&a, &s)| (a * s) * (a * s))
                .sum::<f64>()
                .sqrt();
        (idx, quad, se)
    } else {
        let supp = x0.support().to_vec();
        let (grad, grad_se) = bias.grad(x0.vector(), &supp)?;
        let h_s = select_columns(model.h(), &supp);
        let sub = SubsetFactors::new(&h_s)?;
        let b = DVector::from_fn(supp.len(), |i, _| {
            (if supp[i] == k { 1.0 } else { 0.0 }) + grad[i]
        });
        let ab = sub.gram_pinv_mul(&b);
        let quad = b.dot(&ab);
        let se = 2.0
            * sigma2
            * ab.iter()
                .zip(&grad_se)
                .map(|(&a, &s)| (a * s) * (a * s))
                .sum::<f64>()
                .sqrt();
        (supp, quad, se)
    };

    let mut report = BoundReport::new(sigma2 * quad, BoundKind::SparseCrb);
    report.index_set = Some(indices);
    report.grad_error = se_opt(bias.provenance, se);
    Ok(report)
}

/// Thin SVD of a column subset, used for the pseudoinverse pieces of the
/// projection bounds.
struct SubsetFactors {
    u: DMatrix<f64>,
    sv: DVector<f64>,
    v: DMatrix<f64>,
}

impl SubsetFactors {
    fn new(h_k: &DMatrix<f64>) -> Result<Self, BoundsError> {
        let cols = h_k.ncols();
        let svd = h_k.clone().svd(true, true);
        let sv = svd.singular_values;
        let max_sv = sv.iter().cloned().fold(0.0f64, f64::max);
        let thresh = rank_threshold(max_sv, cols);
        if sv.iter().filter(|&&s| s > thresh).count() < cols {
            return Err(BoundsError::SingularSubmatrix);
        }
        Ok(Self {
            u: svd.u.unwrap().columns(0, cols).into_owned(),
            sv: DVector::from_iterator(cols, sv.iter().take(cols).cloned()),
            v: svd.v_t.unwrap().rows(0, cols).transpose().into_owned(),
        })
    }

    /// `H_K^dagger y`.
    fn pinv_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut c = self.u.transpose() * y;
        for (i, v) in c.iter_mut().enumerate() {
            *v /= self.sv[i];
        }
        &self.v * c
    }

    /// `(H_K^T H_K)^{-1} b`.
    fn gram_pinv_mul(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut c = self.v.transpose() * b;
        for (i, v) in c.iter_mut().enumerate() {
            *v /= self.sv[i] * self.sv[i];
        }
        &self.v * c
    }
}

struct ProjectionPieces {
    scale: f64,
    quad: f64,
    quad_se: f64,
    x_tilde: DVector<f64>,
}

fn projection_pieces(
    problem: &SparseProblem,
    bias: &BiasSpec,
    x0: &ParamVector,
    kset: &[usize],
) -> Result<ProjectionPieces, BoundsError> {
    let k = target(problem)?;
    check_sparsity(problem, x0)?;
    let model = &problem.model;
    let n = model.ncols();
    if kset.is_empty() || kset.len() > problem.s {
        return Err(BoundsError::InvalidIndexSet(format!(
            "|K| = {} outside [1, S = {}]",
            kset.len(),
            problem.s
        )));
    }
    let mut sorted = kset.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != kset.len() || sorted.iter().any(|&i| i >= n) {
        return Err(BoundsError::InvalidIndexSet("duplicate or out-of-range index".into()));
    }

    let h_k = select_columns(model.h(), kset);
    let sub = SubsetFactors::new(&h_k)?;
    let hx0 = model.h() * x0.vector();
    // x_tilde: the unique vector supported on K with H x_tilde = P H x0
    let z = sub.pinv_mul(&hx0);
    let phx0 = &h_k * &z;
    let mut x_tilde = DVector::zeros(n);
    for (i, &idx) in kset.iter().enumerate() {
        x_tilde[idx] = z[i];
    }
    let resid = &hx0 - &phx0;
    let scale = (-resid.norm_squared() / model.sigma2()).exp();

    let (grad, grad_se) = bias.grad(&x_tilde, kset)?;
    let b = DVector::from_fn(kset.len(), |i, _| {
        (if kset[i] == k { 1.0 } else { 0.0 }) + grad[i]
    });
    let ab = sub.gram_pinv_mul(&b);
    let quad = b.dot(&ab);
    let quad_se = 2.0
        * ab.iter()
            .zip(&grad_se)
            .map(|(&a, &s)| (a * s) * (a * s))
            .sum::<f64>()
            .sqrt();
    Ok(ProjectionPieces {
        scale,
        quad,
        quad_se,
        x_tilde,
    })
}

/// Projection bound with the `gamma^2` correction terms
/// (`exp(-||(I-P)Hx0||^2/sigma^2) [sigma^2 b^T (H_K^T H_K)^{-1} b
/// + gamma^2(x_tilde)] - gamma^2(x0)`); negative values are clamped to 0.
pub fn projection_bound_1(
    problem: &SparseProblem,
    bias: &BiasSpec,
    x0: &ParamVector,
    kset: &[usize],
) -> Result<BoundReport, BoundsError> {
    let k = target(problem)?;
    let p = projection_pieces(problem, bias, x0, kset)?;
    let sigma2 = problem.model.sigma2();
    let (gamma_tilde, se_gt) = bias.gamma(&p.x_tilde, k)?;
    let (gamma_0, se_g0) = bias.gamma(x0.vector(), k)?;
    let raw = p.scale * (sigma2 * p.quad + gamma_tilde * gamma_tilde) - gamma_0 * gamma_0;
    let se = ((p.scale * sigma2 * p.quad_se).powi(2)
        + (2.0 * p.scale * gamma_tilde * se_gt).powi(2)
        + (2.0 * gamma_0 * se_g0).powi(2))
    .sqrt();
    let mut report = BoundReport::new(raw.max(0.0), BoundKind::Projection1);
    report.clamped_to_zero = raw < 0.0;
    report.index_set = Some(kset.to_vec());
    report.scale_factor = p.scale;
    report.grad_error = se_opt(bias.provenance, se);
    Ok(report)
}

/// Alternative projection bound without the `gamma^2` terms:
/// `exp(-||(I-P)Hx0||^2/sigma^2) sigma^2 b^T (H_K^T H_K)^{-1} b`.
pub fn projection_bound_2(
    problem: &SparseProblem,
    bias: &BiasSpec,
    x0: &ParamVector,
    kset: &[usize],
) -> Result<BoundReport, BoundsError> {
    let p = projection_pieces(problem, bias, x0, kset)?;
    let sigma2 = problem.model.sigma2();
    let mut report = BoundReport::new(p.scale * sigma2 * p.quad, BoundKind::Projection2);
    report.index_set = Some(kset.to_vec());
    report.scale_factor = p.scale;
    report.grad_error = se_opt(bias.provenance, p.scale * sigma2 * p.quad_se);
    Ok(report)
}

fn rip_style_bound(
    problem: &SparseProblem,
    bias: &BiasSpec,
    x0: &ParamVector,
    kset: &[usize],
    delta_s: f64,
    kind: BoundKind,
) -> Result<BoundReport, BoundsError> {
    let p = projection_pieces(problem, bias, x0, kset)?;
    let sigma2 = problem.model.sigma2();
    // residual support energy ||x0 restricted to supp(x0) \ K||^2
    let resid_energy: f64 = x0
        .support()
        .iter()
        .filter(|i| !kset.contains(i))
        .map(|&i| x0.vector()[i] * x0.vector()[i])
        .sum();
    let scale = (-(1.0 + delta_s) * resid_energy / sigma2).exp();
    let mut report = BoundReport::new(scale * sigma2 * p.quad, kind);
    report.index_set = Some(kset.to_vec());
    report.scale_factor = scale;
    report.grad_error = se_opt(bias.provenance, scale * sigma2 * p.quad_se);
    Ok(report)
}

/// RIP-based bound: the projection exponent replaced by the RIP estimate
/// `(1 + delta_S) ||x0^{supp(x0) \ K}||^2`.
pub fn rip_bound(
    problem: &SparseProblem,
    bias: &BiasSpec,
    x0: &ParamVector,
    kset: &[usize],
    delta_s: f64,
) -> Result<BoundReport, BoundsError> {
    if !(0.0..1.0).contains(&delta_s) {
        return Err(BoundsError::InvalidRip(delta_s));
    }
    rip_style_bound(problem, bias, x0, kset, delta_s, BoundKind::RipBound)
}

/// Coherence-based bound: `delta_S` replaced by `(S - 1) mu(H)`. Evaluated
/// even when `(S - 1) mu >= 1`, with the `non_informative` flag set.
pub fn coherence_bound(
    problem: &SparseProblem,
    bias: &BiasSpec,
    x0: &ParamVector,
    kset: &[usize],
) -> Result<BoundReport, BoundsError> {
    let mu = crate::model::coherence(problem.model.h())?;
    let delta = (problem.s as f64 - 1.0) * mu;
    let mut report = rip_style_bound(problem, bias, x0, kset, delta, BoundKind::CoherenceBound)?;
    report.non_informative = delta >= 1.0;
    Ok(report)
}

/// Hammersley-Chapman-Robbins-type bound for the unbiased SSNM case.
pub fn hcrb_ssnm(problem: &SparseProblem, x0: &ParamVector) -> Result<BoundReport, BoundsError> {
    let k = target(problem)?;
    check_sparsity(problem, x0)?;
    if !problem.model.is_identity() {
        return Err(BoundsError::WrongModel);
    }
    let sigma2 = problem.model.sigma2();
    let n = problem.model.ncols() as f64;
    let s = problem.s as f64;
    let value = if x0.sparsity() < problem.s || x0.support().contains(&k) {
        sigma2
    } else {
        // xi0: the S-largest-magnitude entry of x0 (ties by smallest index)
        let order = ssnm_exact::support_descending(x0);
        let xi0 = x0.vector()[order[problem.s - 1]];
        sigma2 * ((n - s - 1.0) / (n - s)) * (-xi0 * xi0 / sigma2).exp()
    };
    Ok(BoundReport::new(value, BoundKind::Hcrb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KSelectorMode {
    /// `K_k = supp(x0)` on-support, `{k}` off-support.
    FourierPaper,
    /// `K_k = supp(x0)` on-support, `{k}` plus the support minus its weakest
    /// entry off-support.
    SsnmPaper,
    /// The `S - 1` largest-magnitude support entries plus `{k}`.
    Greedy,
}

/// Default per-component index-set choices. Magnitude ties break by smallest
/// index throughout.
pub fn k_selector_default(x0: &ParamVector, k: usize, s: usize, mode: KSelectorMode) -> Vec<usize> {
    let order = ssnm_exact::support_descending(x0);
    let on_support = x0.support().contains(&k);
    let mut kset: Vec<usize> = match mode {
        KSelectorMode::FourierPaper => {
            if on_support {
                order
            } else {
                vec![k]
            }
        }
        KSelectorMode::SsnmPaper => {
            if on_support {
                order
            } else {
                let keep = if order.len() == s {
                    &order[..s - 1]
                } else {
                    &order[..]
                };
                let mut v = vec![k];
                v.extend_from_slice(keep);
                v
            }
        }
        KSelectorMode::Greedy => {
            let mut v: Vec<usize> = order.into_iter().filter(|&i| i != k).collect();
            v.truncate(s - 1);
            v.push(k);
            v
        }
    };
    kset.sort_unstable();
    kset
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundChoice {
    SparseCrb,
    Projection1,
    Projection2,
    Hcrb,
}

/// Vector-estimation bound: the sum over components of the chosen scalar
/// bound with per-component index sets. Returns the summed value and, when
/// any gradient is MC-estimated, the combined standard error.
pub fn vector_bound(
    problem: &SparseProblem,
    biases: &[BiasSpec],
    x0: &ParamVector,
    choice: BoundChoice,
    mode: KSelectorMode,
) -> Result<(f64, Option<f64>), BoundsError> {
    let n = problem.model.ncols();
    if biases.len() != n {
        return Err(BoundsError::InvalidIndexSet(format!(
            "need {n} per-component bias specs, got {}",
            biases.len()
        )));
    }
    let mut total = 0.0;
    let mut se_sq = 0.0;
    let mut any_se = false;
    for k in 0..n {
        let scalar = SparseProblem::new(problem.model.clone(), problem.s, Some(k))?;
        let kset = k_selector_default(x0, k, problem.s, mode);
        let report = match choice {
            BoundChoice::SparseCrb => sparse_crb(&scalar, &biases[k], x0)?,
            BoundChoice::Projection1 => projection_bound_1(&scalar, &biases[k], x0, &kset)?,
            BoundChoice::Projection2 => projection_bound_2(&scalar, &biases[k], x0, &kset)?,
            BoundChoice::Hcrb => hcrb_ssnm(&scalar, x0)?,
        };
        total += report.value;
        if let Some(se) = report.grad_error {
            any_se = true;
            se_sq += se * se;
        }
    }
    Ok((total, if any_se { Some(se_sq.sqrt()) } else { None }))
}
