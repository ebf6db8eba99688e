//! Dense symmetric matrices and the handful of spectral and elementwise
//! operations the estimator is built from.
//!
//! Everything here is a pure function of its inputs. Storage is a column-major
//! `nalgebra::DMatrix`; the [`SymMatrix`] wrapper only adds the symmetry
//! invariant, which every constructor enforces by averaging with the transpose.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Negative eigenvalues above `-PSD_CLAMP_REL * max(1, lambda_max)` are rounding noise.
pub const PSD_CLAMP_REL: f64 = 1e-6;

/// Square, exactly symmetric, real matrix of dimension at least one.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    inner: DMatrix<f64>,
}

impl SymMatrix {
    /// Wraps a square matrix, replacing it by `(A + Aᵀ) / 2`.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: "square matrix".into(),
                found: format!("{}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidInput("matrix dimension must be at least 1".into()));
        }
        let mut matrix = matrix;
        symmetrize_in_place(&mut matrix);
        Ok(Self { inner: matrix })
    }

    /// Row-major constructor, mostly for tests and small literals.
    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{} entries", dim * dim),
                found: format!("{} entries", entries.len()),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(dim, dim, f))
    }

    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Self {
            inner: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Self {
            inner: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let d = diag.len();
        Self::new(DMatrix::from_fn(d, d, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    /// Wraps a matrix the caller has already symmetrized.
    pub(crate) fn from_symmetric(matrix: DMatrix<f64>) -> Self {
        debug_assert_eq!(matrix.nrows(), matrix.ncols());
        debug_assert!(max_asymmetry(&matrix) == 0.0 || !matrix.iter().all(|v| v.is_finite()));
        Self { inner: matrix }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.inner[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    pub fn is_finite(&self) -> bool {
        self.inner.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            inner: &self.inner * factor,
        }
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    /// `selfᵀ · other · self`, symmetrized.
    pub fn congruence(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_same_dim(self, other)?;
        SymMatrix::new(&self.inner * &other.inner * &self.inner)
    }
}

impl<'a> Add<&'a SymMatrix> for &'a SymMatrix {
    type Output = SymMatrix;

    fn add(self, rhs: &'a SymMatrix) -> SymMatrix {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch in addition");
        SymMatrix::from_symmetric(&self.inner + &rhs.inner)
    }
}

impl<'a> Sub<&'a SymMatrix> for &'a SymMatrix {
    type Output = SymMatrix;

    fn sub(self, rhs: &'a SymMatrix) -> SymMatrix {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch in subtraction");
        SymMatrix::from_symmetric(&self.inner - &rhs.inner)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;

    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}

fn check_same_dim(a: &SymMatrix, b: &SymMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", a.dim(), a.dim()),
            found: format!("{}x{}", b.dim(), b.dim()),
        });
    }
    Ok(())
}

/// Replaces `m` by `(m + mᵀ) / 2`. Entries that are already symmetric stay bit-identical.
pub(crate) fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for j in 0..d {
        for i in (j + 1)..d {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..d {
        for i in (j + 1)..d {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Spectral decomposition `A = U diag(values) Uᵀ` with values sorted non-increasing.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector paired with `values[j]`.
    pub vectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn max_value(&self) -> f64 {
        self.values[0]
    }

    pub fn min_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `U diag(weights) Uᵀ`.
    pub fn reconstruct_with(&self, weights: &[f64]) -> SymMatrix {
        weighted_outer_sum(&self.vectors, weights)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(&self.values)
    }

    /// The leading `k` eigenvectors as a `d x k` matrix.
    pub fn leading_vectors(&self, k: usize) -> DMatrix<f64> {
        self.vectors.columns(0, k).into_owned()
    }
}

/// `Σ_j w_j u_j u_jᵀ`, skipping columns whose weight is exactly zero.
pub fn weighted_outer_sum(vectors: &DMatrix<f64>, weights: &[f64]) -> SymMatrix {
    let d = vectors.nrows();
    let active: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] != 0.0).collect();
    if active.is_empty() {
        return SymMatrix::zeros(d);
    }
    let u = vectors.select_columns(active.iter());
    let mut scaled = u.clone();
    for (c, &j) in active.iter().enumerate() {
        scaled.column_mut(c).scale_mut(weights[j]);
    }
    let mut out = scaled * u.transpose();
    symmetrize_in_place(&mut out);
    SymMatrix::from_symmetric(out)
}

/// Full symmetric eigendecomposition, eigenvalues in non-increasing order.
pub fn sym_eigen(a: &SymMatrix) -> Result<EigenDecomposition> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let d = a.dim();
    let failure = || Error::EigenFailure {
        dim: d,
        frobenius: a.as_matrix().norm(),
        max_abs: a.as_matrix().amax(),
    };
    let decompose = |m: DMatrix<f64>| SymmetricEigen::try_new(m, f64::EPSILON, 1000 * d.max(30));
    let finite =
        |e: &SymmetricEigen<f64, Dyn>| e.eigenvalues.iter().chain(e.eigenvectors.iter()).all(|v| v.is_finite());
    let mut eig = decompose(a.as_matrix().clone()).ok_or_else(failure)?;
    if !finite(&eig) {
        // The QR iteration can return NaN on matrices with many exactly-zero
        // rows (sparse Π̂ does this); an identity shift avoids it.
        let shift = 1.0 + a.as_matrix().amax();
        let shifted = a.as_matrix() + DMatrix::identity(d, d) * shift;
        eig = decompose(shifted).filter(finite).ok_or_else(failure)?;
        eig.eigenvalues.add_scalar_mut(-shift);
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = eig.eigenvectors.select_columns(order.iter());
    Ok(EigenDecomposition { values, vectors })
}

/// Principal square root `U max(Λ, 0)^{1/2} Uᵀ` of a (numerically) PSD matrix.
pub fn sqrt_psd(a: &SymMatrix) -> Result<SymMatrix> {
    sqrt_psd_from_eigen(&sym_eigen(a)?)
}

/// Square root from an existing decomposition; shares the clamp rule of [`sqrt_psd`].
pub fn sqrt_psd_from_eigen(eig: &EigenDecomposition) -> Result<SymMatrix> {
    let max = eig.max_value();
    let min = eig.min_value();
    if min < -PSD_CLAMP_REL * max.max(1.0) {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    let roots: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok(eig.reconstruct_with(&roots))
}

/// Elementwise `sign(a) * max(|a| - b, 0)`.
pub fn soft_threshold(a: &SymMatrix, b: f64) -> Result<SymMatrix> {
    if b.is_nan() || b < 0.0 {
        return Err(Error::InvalidInput(format!("threshold must be nonnegative, got {b}")));
    }
    let mut out = a.as_matrix().clone();
    soft_threshold_in_place(&mut out, b);
    Ok(SymMatrix::from_symmetric(out))
}

#[inline]
pub(crate) fn soft_scalar(v: f64, b: f64) -> f64 {
    let mag = v.abs() - b;
    if mag > 0.0 {
        mag.copysign(v)
    } else {
        0.0
    }
}

pub(crate) fn soft_threshold_in_place(m: &mut DMatrix<f64>, b: f64) {
    m.iter_mut().for_each(|v| *v = soft_scalar(*v, b));
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub frobenius: f64,
    pub spectral: f64,
    pub nuclear: f64,
    pub max: f64,
    pub l1: f64,
}

pub fn norms(a: &SymMatrix) -> Result<Norms> {
    let eig = sym_eigen(a)?;
    let m = a.as_matrix();
    Ok(Norms {
        frobenius: m.norm(),
        spectral: eig.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs())),
        nuclear: eig.values.iter().map(|v| v.abs()).sum(),
        max: m.amax(),
        l1: m.iter().map(|v| v.abs()).sum(),
    })
}

/// Lower-triangular `L` with `L Lᵀ = A`.
pub fn cholesky(a: &SymMatrix) -> Result<DMatrix<f64>> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    nalgebra::Cholesky::new(a.as_matrix().clone())
        .map(|c| c.unpack())
        .ok_or(Error::NotPositiveDefinite)
}

/// Orthonormal basis for the column span of a full-column-rank matrix (thin QR).
pub fn orthonormal_columns(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = b.ncols();
    if k == 0 || b.nrows() < k {
        return Err(Error::InvalidInput(format!(
            "cannot orthonormalize a {}x{} matrix",
            b.nrows(),
            k
        )));
    }
    let qr = b.clone().qr();
    let r = qr.r();
    let scale = b.amax().max(f64::MIN_POSITIVE);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-12 * scale) {
        return Err(Error::InvalidInput("columns are linearly dependent".into()));
    }
    Ok(qr.q().columns(0, k).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(d: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SymMatrix::new(DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn random_psd(d: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(d, d + 2, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::new(&b * b.transpose()).unwrap()
    }

    fn ar1(d: usize) -> SymMatrix {
        SymMatrix::from_fn(d, |i, j| 0.5f64.powi((i as i32 - j as i32).abs())).unwrap()
    }

    fn reconstruction_error(a: &SymMatrix, eig: &EigenDecomposition) -> f64 {
        let u = &eig.vectors;
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eig.values.clone()));
        (u * lambda * u.transpose() - a.as_matrix()).norm()
    }

    #[test]
    fn constructor_symmetrizes() {
        let a = SymMatrix::from_row_slice(2, &[1.0, 2.0, 4.0, 3.0]).unwrap();
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(1, 0), 3.0);
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
        assert!(SymMatrix::new(DMatrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn eigen_identity_and_diagonal() {
        let eig = sym_eigen(&SymMatrix::identity(3)).unwrap();
        assert_eq!(eig.values, vec![1.0, 1.0, 1.0]);
        let utu = eig.vectors.transpose() * &eig.vectors;
        assert!((utu - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);

        let eig = sym_eigen(&SymMatrix::from_diagonal(&[1.0, 3.0, -2.0]).unwrap()).unwrap();
        assert_eq!(eig.values, vec![3.0, 1.0, -2.0]);
        assert!((eig.vectors[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((eig.vectors[(0, 1)].abs() - 1.0).abs() < 1e-12);
        assert!((eig.vectors[(2, 2)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_random_reconstruction() {
        let a = random_sym(5, 11);
        let eig = sym_eigen(&a).unwrap();
        assert!(reconstruction_error(&a, &eig) <= 1e-8);
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eigen_rejects_non_finite() {
        let a = SymMatrix::from_row_slice(2, &[1.0, f64::NAN, f64::NAN, 1.0]).unwrap();
        assert!(matches!(sym_eigen(&a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sqrt_examples() {
        let s = sqrt_psd(&SymMatrix::identity(4)).unwrap();
        assert!((s.as_matrix() - DMatrix::<f64>::identity(4, 4)).amax() < 1e-12);

        let s = sqrt_psd(&SymMatrix::from_diagonal(&[4.0, 9.0]).unwrap()).unwrap();
        assert!((s.get(0, 0) - 2.0).abs() < 1e-12);
        assert!((s.get(1, 1) - 3.0).abs() < 1e-12);
        assert!(s.get(0, 1).abs() < 1e-12);

        let sigma = ar1(4);
        let s = sqrt_psd(&sigma).unwrap();
        assert!((s.as_matrix() * s.as_matrix() - sigma.as_matrix()).norm() <= 1e-8);
    }

    #[test]
    fn sqrt_clamps_rounding_but_rejects_indefinite() {
        let tiny = SymMatrix::from_diagonal(&[1.0, -1e-9]).unwrap();
        let s = sqrt_psd(&tiny).unwrap();
        assert_eq!(s.get(1, 1), 0.0);
        let bad = SymMatrix::from_diagonal(&[1.0, -1e-3]).unwrap();
        assert!(matches!(sqrt_psd(&bad), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn soft_threshold_examples() {
        let a = SymMatrix::from_row_slice(2, &[0.7, -0.1, -0.1, -0.7]).unwrap();
        let s = soft_threshold(&a, 0.2).unwrap();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(s.get(0, 1), 0.0);
        assert!((s.get(1, 1) + 0.5).abs() < 1e-15);
        assert_eq!(soft_threshold(&a, 0.0).unwrap(), a);
        assert!(soft_threshold(&a, -0.1).is_err());
        assert!(soft_threshold(&a, f64::NAN).is_err());
    }

    #[test]
    fn norms_examples() {
        let n = norms(&SymMatrix::identity(3)).unwrap();
        assert!((n.frobenius - 3f64.sqrt()).abs() < 1e-12);
        assert!((n.spectral - 1.0).abs() < 1e-12);
        assert!((n.nuclear - 3.0).abs() < 1e-12);
        assert_eq!(n.max, 1.0);
        assert_eq!(n.l1, 3.0);

        let n = norms(&SymMatrix::zeros(4)).unwrap();
        assert_eq!(
            (n.frobenius, n.spectral, n.nuclear, n.max, n.l1),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );

        let n = norms(&SymMatrix::from_diagonal(&[2.0, -1.0]).unwrap()).unwrap();
        assert!((n.spectral - 2.0).abs() < 1e-12);
        assert!((n.nuclear - 3.0).abs() < 1e-12);
        assert!((n.frobenius - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky(&SymMatrix::identity(3)).unwrap();
        assert!((l - DMatrix::<f64>::identity(3, 3)).amax() < 1e-15);

        let a = SymMatrix::from_row_slice(2, &[4.0, 2.0, 2.0, 5.0]).unwrap();
        let l = cholesky(&a).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]);
        assert!((&l - expected).amax() < 1e-14);
        assert!((&l * l.transpose() - a.as_matrix()).norm() <= 1e-10 * a.as_matrix().norm());

        let sigma = ar1(3);
        let l = cholesky(&sigma).unwrap();
        assert!((&l * l.transpose() - sigma.as_matrix()).norm() <= 1e-10 * sigma.as_matrix().norm());
        assert_eq!(l[(0, 1)], 0.0);

        let indefinite = SymMatrix::from_diagonal(&[1.0, -1.0]).unwrap();
        assert_eq!(cholesky(&indefinite), Err(Error::NotPositiveDefinite));
    }

    #[test]
    fn eigen_reconstruction_large() {
        for (d, seed) in [(50, 1), (150, 2), (300, 3)] {
            let a = random_sym(d, seed);
            let eig = sym_eigen(&a).unwrap();
            let fro = a.as_matrix().norm();
            assert!(reconstruction_error(&a, &eig) <= 1e-8 * fro.max(1.0), "d={d}");
            let utu = eig.vectors.transpose() * &eig.vectors;
            assert!((utu - DMatrix::<f64>::identity(d, d)).amax() <= 1e-8, "d={d}");
        }
    }

    #[test]
    fn orthonormal_columns_spans_input() {
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]);
        let q = orthonormal_columns(&b).unwrap();
        assert!((q.column(0).norm() - 1.0).abs() < 1e-14);
        assert!((q[(0, 0)].abs() - 0.5f64.sqrt()).abs() < 1e-14);
        let dependent = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 0.0, 0.0]);
        assert!(orthonormal_columns(&dependent).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prop_eigen_reconstructs(d in 1usize..30, seed in any::<u64>()) {
            let a = random_sym(d, seed);
            let eig = sym_eigen(&a).unwrap();
            prop_assert!(reconstruction_error(&a, &eig) <= 1e-8 * a.as_matrix().norm().max(1.0));
        }

        #[test]
        fn prop_sqrt_squares_back(d in 1usize..20, seed in any::<u64>()) {
            let a = random_psd(d, seed);
            let s = sqrt_psd(&a).unwrap();
            let err = (s.as_matrix() * s.as_matrix() - a.as_matrix()).norm();
            prop_assert!(err <= 1e-6 * a.as_matrix().norm());
        }

        #[test]
        fn prop_soft_threshold_non_expansive(d in 1usize..12, s1 in any::<u64>(), s2 in any::<u64>(), b in 0.0f64..1.0) {
            let a = random_sym(d, s1);
            let c = random_sym(d, s2);
            let lhs = (soft_threshold(&a, b).unwrap().as_matrix() - soft_threshold(&c, b).unwrap().as_matrix()).norm();
            let rhs = (a.as_matrix() - c.as_matrix()).norm();
            prop_assert!(lhs <= rhs + 1e-15);
        }

        #[test]
        fn prop_nuclear_is_trace_for_psd(d in 1usize..20, seed in any::<u64>()) {
            let a = random_psd(d, seed);
            let n = norms(&a).unwrap();
            prop_assert!((n.nuclear - a.trace()).abs() <= 1e-9 * a.trace().max(1.0));
        }
    }
}
