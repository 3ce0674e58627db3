//! Problem definition: the linear Gaussian observation model, its thin SVD,
//! and combinatorial matrix diagnostics (spark, RIP constant, coherence).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

pub mod io;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("covariance matrix is not symmetric positive definite")]
    InvalidCovariance,
    #[error("subset enumeration budget exceeded ({subsets} subsets, budget {budget})")]
    BudgetExceeded { subsets: u128, budget: u128 },
}

/// Thin singular value decomposition `H = U S V^T` truncated at numerical rank.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// M x D, orthonormal columns.
    pub u: DMatrix<f64>,
    /// D strictly positive singular values, descending.
    pub singular_values: DVector<f64>,
    /// N x D, orthonormal columns.
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `(H^T H)^dagger b` via the cached factors.
    pub fn gram_pinv_mul(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut coeffs = self.v.transpose() * b;
        for (i, c) in coeffs.iter_mut().enumerate() {
            let s = self.singular_values[i];
            *c /= s * s;
        }
        &self.v * coeffs
    }

    /// Minimum-norm least-squares solution of `H z = y`, i.e. `H^dagger y`.
    pub fn pinv_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut coeffs = self.u.transpose() * y;
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c /= self.singular_values[i];
        }
        &self.v * coeffs
    }
}

/// Observation model `y = H x + n`, `n ~ N(0, sigma2 I)`.
#[derive(Debug, Clone)]
pub struct GaussianLinearModel {
    h: DMatrix<f64>,
    sigma2: f64,
    svd: ThinSvd,
}

/// Singular values below `max_sv * N * eps * 64` are treated as zero.
pub fn rank_threshold(max_sv: f64, n_cols: usize) -> f64 {
    max_sv * n_cols as f64 * f64::EPSILON * 64.0
}

impl GaussianLinearModel {
    pub fn new(h: DMatrix<f64>, sigma2: f64) -> Result<Self, ModelError> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(ModelError::InvalidModel("empty matrix".into()));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidModel("non-finite entries".into()));
        }
        if h.iter().all(|&v| v == 0.0) {
            return Err(ModelError::InvalidModel("zero matrix".into()));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(ModelError::InvalidModel(format!(
                "noise variance must be positive, got {sigma2}"
            )));
        }
        let svd = thin_svd(&h)?;
        Ok(Self { h, sigma2, svd })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn svd(&self) -> &ThinSvd {
        &self.svd
    }

    pub fn rank(&self) -> usize {
        self.svd.rank()
    }

    pub fn nrows(&self) -> usize {
        self.h.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.h.ncols()
    }

    pub fn is_identity(&self) -> bool {
        self.h.nrows() == self.h.ncols() && self.h == DMatrix::identity(self.h.nrows(), self.h.ncols())
    }
}

fn thin_svd(h: &DMatrix<f64>) -> Result<ThinSvd, ModelError> {
    // nalgebra's `svd` returns singular values sorted descending
    let svd = h.clone().svd(true, true);
    let u_full = svd.u.ok_or_else(|| ModelError::InvalidModel("svd failed".into()))?;
    let vt_full = svd
        .v_t
        .ok_or_else(|| ModelError::InvalidModel("svd failed".into()))?;
    let sv = svd.singular_values;
    let max_sv = sv.iter().cloned().fold(0.0f64, f64::max);
    let thresh = rank_threshold(max_sv, h.ncols());
    let rank = sv.iter().filter(|&&s| s > thresh).count();
    if rank == 0 {
        return Err(ModelError::InvalidModel("numerically zero matrix".into()));
    }
    Ok(ThinSvd {
        u: u_full.columns(0, rank).into_owned(),
        singular_values: DVector::from_iterator(rank, sv.iter().take(rank).cloned()),
        v: vt_full.rows(0, rank).transpose().into_owned(),
    })
}

/// Sparse estimation problem: model plus sparsity degree `S` and, in scalar
/// mode, the target component index `k` (0-based).
#[derive(Debug, Clone)]
pub struct SparseProblem {
    pub model: GaussianLinearModel,
    pub s: usize,
    pub k: Option<usize>,
}

impl SparseProblem {
    pub fn new(model: GaussianLinearModel, s: usize, k: Option<usize>) -> Result<Self, ModelError> {
        let n = model.ncols();
        if s == 0 || s > n {
            return Err(ModelError::InvalidModel(format!(
                "sparsity degree {s} outside [1, {n}]"
            )));
        }
        if let Some(k) = k {
            if k >= n {
                return Err(ModelError::InvalidModel(format!("target index {k} >= N = {n}")));
            }
        }
        Ok(Self { model, s, k })
    }

    /// Brute-force check of `spark(H) > S`, feasible only at desk scale.
    /// Callers at realistic CS sizes attest the condition instead.
    pub fn check_spark_condition(&self, max_n: usize) -> Option<bool> {
        match spark(self.model.h(), max_n) {
            SparkResult::Known(sp) => Some(sp > self.s),
            SparkResult::Unknown => None,
        }
    }
}

/// Parameter vector with its exact support.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    x: DVector<f64>,
    support: Vec<usize>,
}

impl ParamVector {
    pub fn new(x: DVector<f64>) -> Self {
        let support = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
        Self { x, support }
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(x))
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(DVector::zeros(n))
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.x
    }

    /// Sorted indices of the nonzero entries.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn sparsity(&self) -> usize {
        self.support.len()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparkResult {
    Known(usize),
    /// Matrix too large for exhaustive enumeration.
    Unknown,
}

/// Smallest number of linearly dependent columns of `H`. If every column
/// subset is independent (`M >= N`, full rank), reports `N + 1`.
pub fn spark(h: &DMatrix<f64>, max_n: usize) -> SparkResult {
    let n = h.ncols();
    if n > max_n {
        return SparkResult::Unknown;
    }
    let full_rank = numerical_rank(h);
    // a dependent subset of size k exists iff some k columns have rank < k;
    // search in increasing k so the first hit is the spark
    for k in 1..=n {
        if k > full_rank + 1 {
            // any k columns with k > rank+1 contain a dependent (rank+1)-subset,
            // which would already have been found
            break;
        }
        let mut found = false;
        for_each_subset(n, k, &mut |subset| {
            if !found {
                let sub = select_columns(h, subset);
                if numerical_rank(&sub) < k {
                    found = true;
                }
            }
        });
        if found {
            return SparkResult::Known(k);
        }
    }
    SparkResult::Known(n + 1)
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let max_sv = sv.iter().cloned().fold(0.0f64, f64::max);
    if max_sv == 0.0 {
        return 0;
    }
    let thresh = rank_threshold(max_sv, m.ncols());
    sv.iter().filter(|&&s| s > thresh).count()
}

pub fn select_columns(h: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(h.nrows(), idx.len());
    for (j, &col) in idx.iter().enumerate() {
        out.set_column(j, &h.column(col));
    }
    out
}

fn for_each_subset(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    let mut subset: Vec<usize> = (0..k).collect();
    if k == 0 || k > n {
        return;
    }
    loop {
        f(&subset);
        // next lexicographic combination
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if subset[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        subset[i] += 1;
        for j in i + 1..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

const UNIT_NORM_TOL: f64 = 1e-8;

fn check_unit_columns(h: &DMatrix<f64>) -> Result<(), ModelError> {
    for j in 0..h.ncols() {
        if (h.column(j).norm() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(ModelError::InvalidModel(format!(
                "column {j} is not unit norm"
            )));
        }
    }
    Ok(())
}

/// Exact RIP constant `delta_K` by enumeration of all size-K column subsets.
pub fn rip_constant(h: &DMatrix<f64>, k: usize, budget: u128) -> Result<f64, ModelError> {
    check_unit_columns(h)?;
    let n = h.ncols();
    if k == 0 || k > n {
        return Err(ModelError::InvalidModel(format!("RIP order {k} outside [1, {n}]")));
    }
    let subsets = binomial(n, k);
    if subsets > budget {
        return Err(ModelError::BudgetExceeded { subsets, budget });
    }
    let mut delta = 0.0f64;
    for_each_subset(n, k, &mut |subset| {
        let sub = select_columns(h, subset);
        let gram = sub.transpose() * &sub;
        let eig = SymmetricEigen::new(gram);
        let lmax = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let lmin = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        delta = delta.max((lmax - 1.0).max(1.0 - lmin));
    });
    Ok(delta)
}

/// Coherence `mu(H) = max_{i != j} |h_i^T h_j|` for unit-norm columns.
pub fn coherence(h: &DMatrix<f64>) -> Result<f64, ModelError> {
    check_unit_columns(h)?;
    let n = h.ncols();
    if n < 2 {
        return Err(ModelError::InvalidModel("coherence needs at least 2 columns".into()));
    }
    let mut mu = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            mu = mu.max(h.column(i).dot(&h.column(j)).abs());
        }
    }
    Ok(mu)
}

/// Whitening transform: given noise covariance `C`, returns `C^{-1/2} H` so
/// the transformed noise is white with unit variance.
pub fn whiten(h: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), ModelError> {
    if c.nrows() != c.ncols() || c.nrows() != h.nrows() {
        return Err(ModelError::InvalidCovariance);
    }
    let asym = (c - c.transpose()).abs().max();
    let scale = c.abs().max().max(1.0);
    if asym > 1e-10 * scale {
        return Err(ModelError::InvalidCovariance);
    }
    let inv_sqrt = spd_inverse_sqrt(c)?;
    Ok((inv_sqrt * h, 1.0))
}

pub(crate) fn spd_inverse_sqrt(c: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
    let eig = SymmetricEigen::new(c.clone());
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(ModelError::InvalidCovariance);
    }
    let q = &eig.eigenvectors;
    let d_inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(q * d_inv_sqrt * q.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut StdRng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
    }

    fn normalize_columns(mut h: DMatrix<f64>) -> DMatrix<f64> {
        for mut col in h.column_iter_mut() {
            let norm = col.norm();
            col /= norm;
        }
        h
    }

    #[test]
    fn identity_model() {
        let m = GaussianLinearModel::new(DMatrix::identity(2, 2), 1.0).unwrap();
        assert_eq!(m.rank(), 2);
        for s in m.svd().singular_values.iter() {
            assert_abs_diff_eq!(*s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_one_model() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let m = GaussianLinearModel::new(h, 1.0).unwrap();
        assert_eq!(m.rank(), 1);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(GaussianLinearModel::new(DMatrix::zeros(3, 3), 1.0).is_err());
        let h = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(GaussianLinearModel::new(h, 1.0).is_err());
        assert!(GaussianLinearModel::new(DMatrix::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn fourier_matrix_rank() {
        let h = crate::experiments::fourier_system_matrix(128, 8, 0.2, 3.9e-3);
        let m = GaussianLinearModel::new(h.clone(), 1.0).unwrap();
        assert_eq!(m.rank(), 16);
        // independent oracle: rank from the Gram-matrix eigendecomposition
        let gram = h.transpose() * &h;
        let eig = SymmetricEigen::new(gram);
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let oracle_rank = eig
            .eigenvalues
            .iter()
            .filter(|&&l| l > lmax * 16.0 * f64::EPSILON * 64.0)
            .count();
        assert_eq!(oracle_rank, 16);
    }

    #[test]
    fn svd_invariants_random() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let m = rng.gen_range(2..8);
            let n = rng.gen_range(2..8);
            let h = random_matrix(&mut rng, m, n);
            let model = GaussianLinearModel::new(h.clone(), 1.0).unwrap();
            let svd = model.svd();
            let d = svd.rank();
            let gram_u = svd.u.transpose() * &svd.u;
            let gram_v = svd.v.transpose() * &svd.v;
            assert!((gram_u - DMatrix::identity(d, d)).abs().max() < 1e-10);
            assert!((gram_v - DMatrix::identity(d, d)).abs().max() < 1e-10);
            let recon = &svd.u * DMatrix::from_diagonal(&svd.singular_values) * svd.v.transpose();
            assert!((recon - &h).norm() / h.norm() < 1e-10);
            assert!(svd.singular_values.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn whiten_identity_and_scalar() {
        let h = DMatrix::identity(3, 3);
        let (ht, s2) = whiten(&h, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s2, 1.0);
        assert!((ht - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        let (ht, _) = whiten(&h, &(DMatrix::identity(3, 3) * 4.0)).unwrap();
        assert!((ht - DMatrix::identity(3, 3) * 0.5).abs().max() < 1e-12);
    }

    #[test]
    fn whiten_random_spd_sqrt_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 4, 4);
        let c = &a * a.transpose() + DMatrix::identity(4, 4) * 0.5;
        let inv_sqrt = spd_inverse_sqrt(&c).unwrap();
        let should_be_eye = &inv_sqrt * &c * &inv_sqrt;
        assert!((should_be_eye - DMatrix::identity(4, 4)).abs().max() < 1e-10);
    }

    #[test]
    fn whiten_rejects_indefinite() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(whiten(&DMatrix::identity(2, 2), &c).is_err());
    }

    #[test]
    fn spark_identity_and_duplicate() {
        assert_eq!(spark(&DMatrix::identity(4, 4), 20), SparkResult::Known(5));
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(spark(&h, 20), SparkResult::Known(2));
    }

    #[test]
    fn spark_unknown_above_budget() {
        let h = DMatrix::identity(25, 25);
        assert_eq!(spark(&h, 20), SparkResult::Unknown);
    }

    #[test]
    fn spark_random_gaussian() {
        let mut rng = StdRng::seed_from_u64(3);
        let h = random_matrix(&mut rng, 6, 10);
        assert_eq!(spark(&h, 20), SparkResult::Known(7));
    }

    #[test]
    fn spark_condition_implies_full_rank_submatrices() {
        let mut rng = StdRng::seed_from_u64(5);
        let h = random_matrix(&mut rng, 6, 10);
        let SparkResult::Known(sp) = spark(&h, 20) else { panic!() };
        let s = sp - 1;
        for_each_subset(10, s, &mut |subset| {
            let sub = select_columns(&h, subset);
            assert_eq!(numerical_rank(&sub), s);
        });
    }

    #[test]
    fn rip_identity_zero() {
        for k in 1..=3 {
            assert_abs_diff_eq!(rip_constant(&DMatrix::identity(4, 4), k, 1 << 20).unwrap(), 0.0);
        }
    }

    #[test]
    fn rip_duplicate_columns() {
        let col = [3.0f64 / 5.0, 4.0 / 5.0];
        let h = DMatrix::from_columns(&[
            DVector::from_column_slice(&col),
            DVector::from_column_slice(&col),
            DVector::from_column_slice(&[1.0, 0.0]),
        ]);
        assert_abs_diff_eq!(rip_constant(&h, 2, 1 << 20).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rip_budget_and_normalization_errors() {
        let h = normalize_columns(random_matrix(&mut StdRng::seed_from_u64(1), 8, 12));
        assert!(matches!(
            rip_constant(&h, 6, 10),
            Err(ModelError::BudgetExceeded { .. })
        ));
        let h2 = h * 2.0;
        assert!(rip_constant(&h2, 2, 1 << 20).is_err());
        assert!(coherence(&h2).is_err());
    }

    #[test]
    fn delta2_equals_coherence_and_monotonicity() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..5 {
            let h = normalize_columns(random_matrix(&mut rng, 8, 12));
            let mu = coherence(&h).unwrap();
            let d2 = rip_constant(&h, 2, 1 << 20).unwrap();
            let d3 = rip_constant(&h, 3, 1 << 20).unwrap();
            assert_abs_diff_eq!(d2, mu, epsilon = 1e-10);
            assert!(d3 >= d2 - 1e-12);
            assert!(d2 <= 1.0 * mu + 1e-12);
            assert!(d3 <= 2.0 * mu + 1e-12);
        }
    }

    #[test]
    fn coherence_trivial_cases() {
        assert_abs_diff_eq!(coherence(&DMatrix::identity(4, 4)).unwrap(), 0.0);
        let col = DVector::from_column_slice(&[0.6, 0.8]);
        let h = DMatrix::from_columns(&[col.clone(), col]);
        assert_abs_diff_eq!(coherence(&h).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn param_vector_support() {
        let p = ParamVector::from_slice(&[0.0, 2.0, 0.0, -1.0]);
        assert_eq!(p.support(), &[1, 3]);
        assert_eq!(p.sparsity(), 2);
    }
}
