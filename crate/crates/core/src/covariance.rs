//! Covariance-type estimators: the marginal covariance of `x`, the two
//! estimators of `E{cov(x | y)}` (pairwise differences of concomitants and
//! slicing), the resulting inverse-regression covariance, and the fitted
//! covariance used by principal fitted components.
//!
//! All second moments use the `1/n` normalization. Observations are ordered by
//! a stable sort on `(y, original index)`, so ties resolve deterministically.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, symmetrize_in_place, SymMatrix};

/// Upper bound on the condition number of `FᵀF` accepted by [`fit_cov`].
pub const MAX_BASIS_CONDITION: f64 = 1e12;

/// `n` paired observations `(y_i, x_i)`; row `i` of `x` is `x_iᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} responses", x.nrows()),
                found: format!("{} responses", y.len()),
            });
        }
        if y.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: y.len(),
            });
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidInput("covariate dimension must be at least 1".into()));
        }
        if !y.iter().chain(x.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(Self { y, x })
    }

    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: format!("{d} covariates"),
                found: format!("{} covariates in row {}", rows[bad].len(), bad),
            });
        }
        Self::new(y, DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    /// Sub-dataset with the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let x = self.x.select_rows(rows.iter());
        Self::new(y, x)
    }

    /// Indices sorted by `y`, ties kept in input order.
    pub fn response_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| self.y[a].total_cmp(&self.y[b]));
        order
    }
}

fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// `XcᵀXc / n` where `Xc` is `x` with column means removed.
pub fn sample_cov(x: &DMatrix<f64>) -> Result<SymMatrix> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let xc = centered(x);
    let mut cov = xc.tr_mul(&xc) / n as f64;
    symmetrize_in_place(&mut cov);
    SymMatrix::new(cov)
}

/// Pairwise-difference estimator of `E{cov(x | y)}`.
///
/// Observations are sorted by `y`; concomitants `(2i-1, 2i)` form pairs and the
/// outer products of their differences are summed and divided by `n`. With odd
/// `n` the largest-`y` observation is left unpaired.
pub fn diff_estimator_t(data: &Dataset) -> SymMatrix {
    let order = data.response_order();
    let pairs = data.n() / 2;
    let d = data.d();
    let x = data.x();
    let diffs = DMatrix::from_fn(pairs, d, |p, j| x[(order[2 * p + 1], j)] - x[(order[2 * p], j)]);
    let mut t = diffs.tr_mul(&diffs) / data.n() as f64;
    symmetrize_in_place(&mut t);
    SymMatrix::from_symmetric(t)
}

/// Contiguous ranges over the sorted order; sizes differ by at most one, larger first.
pub fn slice_ranges(n: usize, slices: usize) -> Result<Vec<Range<usize>>> {
    if slices == 0 || slices > n {
        return Err(Error::InvalidSlicing(format!(
            "need 1 <= H <= n, got H = {slices} with n = {n}"
        )));
    }
    let base = n / slices;
    let extra = n % slices;
    let mut start = 0;
    Ok((0..slices)
        .map(|h| {
            let len = base + usize::from(h < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Slice estimator of `E{cov(x | y)}`: the equal-weight average over `H`
/// slices of the within-slice `1/n_h` covariances.
pub fn slice_estimator_t(data: &Dataset, slices: usize) -> Result<SymMatrix> {
    let ranges = slice_ranges(data.n(), slices)?;
    let order = data.response_order();
    let d = data.d();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for range in ranges {
        let members = &order[range];
        let block = data.x().select_rows(members.iter());
        let bc = centered(&block);
        acc += bc.tr_mul(&bc) / members.len() as f64;
    }
    acc /= slices as f64;
    symmetrize_in_place(&mut acc);
    Ok(SymMatrix::from_symmetric(acc))
}

/// Which estimator of `E{cov(x | y)}` to subtract from the marginal covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ConditionalMethod {
    Diff,
    Slice(usize),
}

impl ConditionalMethod {
    pub fn estimate_t(&self, data: &Dataset) -> Result<SymMatrix> {
        match *self {
            ConditionalMethod::Diff => Ok(diff_estimator_t(data)),
            ConditionalMethod::Slice(h) => slice_estimator_t(data, h),
        }
    }

    /// Slices per fold the method needs (1 for the difference estimator).
    pub fn slice_count(&self) -> usize {
        match *self {
            ConditionalMethod::Diff => 1,
            ConditionalMethod::Slice(h) => h,
        }
    }
}

impl Default for ConditionalMethod {
    fn default() -> Self {
        ConditionalMethod::Slice(5)
    }
}

impl fmt::Display for ConditionalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionalMethod::Diff => write!(f, "diff"),
            ConditionalMethod::Slice(h) => write!(f, "slice:{h}"),
        }
    }
}

impl FromStr for ConditionalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "diff" => Ok(ConditionalMethod::Diff),
            other => {
                let h = other
                    .strip_prefix("slice:")
                    .and_then(|h| h.parse::<usize>().ok())
                    .filter(|&h| h >= 1)
                    .ok_or_else(|| Error::InvalidInput(format!("expected `diff` or `slice:H`, got `{other}`")))?;
                Ok(ConditionalMethod::Slice(h))
            }
        }
    }
}

impl From<ConditionalMethod> for String {
    fn from(m: ConditionalMethod) -> Self {
        m.to_string()
    }
}

impl TryFrom<String> for ConditionalMethod {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// `Σ̂_x`, the estimate of `E{cov(x | y)}`, and their difference.
#[derive(Debug, Clone)]
pub struct SirMoments {
    pub sigma_x: SymMatrix,
    pub t: SymMatrix,
    pub conditional: SymMatrix,
}

pub fn sir_moments(data: &Dataset, method: ConditionalMethod) -> Result<SirMoments> {
    let sigma_x = sample_cov(data.x())?;
    let t = method.estimate_t(data)?;
    let conditional = &sigma_x - &t;
    Ok(SirMoments {
        sigma_x,
        t,
        conditional,
    })
}

/// `Σ̂_x − T`, the estimate of `cov{E(x | y)}`. Not clamped; may be indefinite.
pub fn conditional_cov(data: &Dataset, method: ConditionalMethod) -> Result<SymMatrix> {
    Ok(sir_moments(data, method)?.conditional)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Polynomial,
    SliceIndicator,
}

/// The basis `f(y)`: polynomial of degree `order`, or `order` slice indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub order: usize,
}

impl BasisSpec {
    pub fn polynomial(order: usize) -> Self {
        Self {
            kind: BasisKind::Polynomial,
            order,
        }
    }

    pub fn slice_indicator(slices: usize) -> Self {
        Self {
            kind: BasisKind::SliceIndicator,
            order: slices,
        }
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            BasisKind::Polynomial => write!(f, "poly:{}", self.order),
            BasisKind::SliceIndicator => write!(f, "slice:{}", self.order),
        }
    }
}

impl FromStr for BasisSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("expected `poly:R` or `slice:H`, got `{s}`"));
        let (kind, order) = s.trim().split_once(':').ok_or_else(bad)?;
        let order: usize = order.parse().map_err(|_| bad())?;
        if order == 0 {
            return Err(bad());
        }
        match kind {
            "poly" => Ok(BasisSpec::polynomial(order)),
            "slice" => Ok(BasisSpec::slice_indicator(order)),
            _ => Err(bad()),
        }
    }
}

impl From<BasisSpec> for String {
    fn from(b: BasisSpec) -> Self {
        b.to_string()
    }
}

impl TryFrom<String> for BasisSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisWarning {
    /// All responses are equal, so slice membership is an artifact of input order.
    DegenerateResponse,
}

/// Column-centered basis matrix `F` (`n x r`).
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub values: DMatrix<f64>,
    pub warning: Option<BasisWarning>,
}

pub fn basis_matrix(y: &[f64], spec: BasisSpec) -> Result<BasisMatrix> {
    let n = y.len();
    let r = spec.order;
    if r == 0 {
        return Err(Error::InvalidBasis("basis order must be at least 1".into()));
    }
    let raw = match spec.kind {
        BasisKind::Polynomial => DMatrix::from_fn(n, r, |i, k| y[i].powi(k as i32 + 1)),
        BasisKind::SliceIndicator => {
            if r < 2 || r > n {
                return Err(Error::InvalidBasis(format!(
                    "slice-indicator basis needs 2 <= H <= n, got H = {r} with n = {n}"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
            let mut f = DMatrix::zeros(n, r);
            for (h, range) in slice_ranges(n, r)?.into_iter().enumerate() {
                for &i in &order[range] {
                    f[(i, h)] = 1.0;
                }
            }
            f
        }
    };
    let degenerate = spec.kind == BasisKind::SliceIndicator && y.iter().all(|&v| v == y[0]);
    Ok(BasisMatrix {
        values: centered(&raw),
        warning: degenerate.then_some(BasisWarning::DegenerateResponse),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitCovOptions {
    /// Use a pseudo-inverse of `FᵀF` instead of failing on a collinear basis.
    pub allow_pseudo_inverse: bool,
}

/// `Σ̂_fit = XᵀF (FᵀF)⁻¹ FᵀX / n` with centered `X` and `F`.
pub fn fit_cov(data: &Dataset, spec: BasisSpec) -> Result<SymMatrix> {
    fit_cov_with(data, spec, FitCovOptions::default())
}

pub fn fit_cov_with(data: &Dataset, spec: BasisSpec, opts: FitCovOptions) -> Result<SymMatrix> {
    let n = data.n();
    if n <= spec.order {
        return Err(Error::InvalidBasis(format!(
            "need n > r, got n = {n} and r = {}",
            spec.order
        )));
    }
    let basis = basis_matrix(data.y(), spec)?;
    // Centered slice indicators sum to zero; the last one is redundant.
    let f = match spec.kind {
        BasisKind::SliceIndicator => basis.values.columns(0, spec.order - 1).into_owned(),
        BasisKind::Polynomial => basis.values,
    };
    let gram = SymMatrix::new(f.tr_mul(&f))?;
    let eig = sym_eigen(&gram)?;
    let max = eig.max_value();
    let min = eig.min_value();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if (condition.is_nan() || condition > MAX_BASIS_CONDITION) && !opts.allow_pseudo_inverse {
        return Err(Error::CollinearBasis {
            condition,
            limit: MAX_BASIS_CONDITION,
        });
    }
    let cutoff = max.max(0.0) / MAX_BASIS_CONDITION;
    let keep: Vec<usize> = (0..eig.dim()).filter(|&j| eig.values[j] > cutoff).collect();
    let xc = centered(data.x());
    // C = XᵀF U Λ^{-1/2}, so that Σ̂_fit = C Cᵀ / n.
    let mut c = xc.tr_mul(&f) * eig.vectors.select_columns(keep.iter());
    for (col, &j) in keep.iter().enumerate() {
        c.column_mut(col).scale_mut(eig.values[j].sqrt().recip());
    }
    let mut fit = &c * c.transpose() / n as f64;
    symmetrize_in_place(&mut fit);
    Ok(SymMatrix::from_symmetric(fit))
}
