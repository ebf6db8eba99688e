//! Support recovery rates, score correlations, and subspace distance.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest tolerated `‖UᵀU − I‖_max` for a basis passed to [`subspace_distance`].
pub const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportEval {
    pub tpr: f64,
    pub fpr: f64,
}

/// True and false positive rates of `estimated` against `truth` (0-based indices below `d`).
pub fn support_rates(truth: &[usize], estimated: &[usize], d: usize) -> Result<SupportEval> {
    let t: BTreeSet<usize> = truth.iter().copied().collect();
    let e: BTreeSet<usize> = estimated.iter().copied().collect();
    if let Some(&j) = t.iter().chain(e.iter()).find(|&&j| j >= d) {
        return Err(Error::InvalidInput(format!("index {j} out of range for d = {d}")));
    }
    if t.is_empty() || t.len() == d {
        return Err(Error::UndefinedRate(format!(
            "true support has {} of {d} indices",
            t.len()
        )));
    }
    let hits = t.intersection(&e).count();
    let false_hits = e.len() - hits;
    Ok(SupportEval {
        tpr: hits as f64 / t.len() as f64,
        fpr: false_hits as f64 / (d - t.len()) as f64,
    })
}

fn pearson(a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
    let (ma, mb) = (a.mean(), b.mean());
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (u, v) = (x - ma, y - mb);
        sab += u * v;
        saa += u * u;
        sbb += v * v;
    }
    if saa > 0.0 && sbb > 0.0 {
        Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
    } else {
        None
    }
}

/// For each true direction `β_k`, the largest `|corr(Xβ_k, Xπ̂_j)|` over the
/// estimated directions, averaged over `k`. Correlations are taken over the
/// rows of `x`.
pub fn score_correlation(x: &DMatrix<f64>, truth: &DMatrix<f64>, estimated: &DMatrix<f64>) -> Result<f64> {
    let (n, d) = x.shape();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    for (name, m) in [("true", truth), ("estimated", estimated)] {
        if m.nrows() != d || m.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                expected: format!("{d} x K {name} directions with K >= 1"),
                found: format!("{} x {}", m.nrows(), m.ncols()),
            });
        }
    }
    let est_scores: Vec<DVector<f64>> = estimated.column_iter().map(|c| x * c).collect();
    let mut total = 0.0;
    for (k, beta) in truth.column_iter().enumerate() {
        let true_scores = x * beta;
        let mut best = 0.0f64;
        for (j, s) in est_scores.iter().enumerate() {
            let r = pearson(&true_scores, s).ok_or_else(|| {
                Error::UndefinedCorrelation(format!(
                    "zero-variance scores for true direction {k} or estimated direction {j}"
                ))
            })?;
            best = best.max(r.abs());
        }
        total += best;
    }
    Ok(total / truth.ncols() as f64)
}

fn check_orthonormal(name: &str, u: &DMatrix<f64>) -> Result<()> {
    let gram = u.transpose() * u;
    let dev = (gram - DMatrix::identity(u.ncols(), u.ncols())).amax();
    if dev.is_nan() || dev > ORTHONORMAL_TOL {
        return Err(Error::InvalidBasis(format!(
            "{name} columns deviate from orthonormality by {dev:.3e}"
        )));
    }
    Ok(())
}

/// `‖UUᵀ − WWᵀ‖_F` for orthonormal `d x K` bases.
pub fn subspace_distance(u: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<f64> {
    if u.shape() != w.shape() || u.ncols() == 0 {
        return Err(Error::DimensionMismatch {
            expected: format!("{} x {} with K >= 1", u.nrows(), u.ncols()),
            found: format!("{} x {}", w.nrows(), w.ncols()),
        });
    }
    check_orthonormal("first", u)?;
    check_orthonormal("second", w)?;
    Ok((u * u.transpose() - w * w.transpose()).norm())
}
