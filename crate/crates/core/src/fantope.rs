//! Euclidean projection onto `{H ⪰ 0 : ‖H‖_* ≤ K, ‖H‖_sp ≤ 1}`.
//!
//! With `W = Σ ω_j u_j u_jᵀ`, the projection keeps the eigenvectors and maps
//! each eigenvalue to `min(1, max(ω_j − γ*, 0))`, where `γ*` is the smallest
//! nonnegative shift whose clipped eigenvalues sum to at most `K`.

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, EigenDecomposition, SymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct ClipSolution {
    pub gamma_star: f64,
    pub clipped_values: Vec<f64>,
    pub achieved_trace: f64,
}

/// `Σ_j min(1, max(ω_j − γ, 0))`, non-increasing and piecewise linear in `γ`.
pub fn clipped_sum(omega: &[f64], gamma: f64) -> f64 {
    omega.iter().map(|&w| clip(w - gamma)).sum()
}

#[inline]
fn clip(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Smallest `γ ≥ 0` with `clipped_sum(ω, γ) ≤ K`.
///
/// The map is linear between consecutive breakpoints `{ω_j, ω_j − 1}`, so the
/// bracketing segment is located by binary search and inverted exactly.
pub fn solve_gamma(omega: &[f64], k: usize) -> ClipSolution {
    let target = k as f64;
    let gamma_star = if clipped_sum(omega, 0.0) <= target {
        0.0
    } else {
        let mut knots: Vec<f64> = omega.iter().flat_map(|&w| [w, w - 1.0]).filter(|&b| b > 0.0).collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        // clipped_sum(0) > K and clipped_sum(max ω) = 0 < K; find the first knot at or below K.
        let first_feasible = knots.partition_point(|&b| clipped_sum(omega, b) > target);
        let hi = knots[first_feasible];
        let lo = if first_feasible == 0 {
            0.0
        } else {
            knots[first_feasible - 1]
        };
        let f_lo = clipped_sum(omega, lo);
        let f_hi = clipped_sum(omega, hi);
        // f_lo > K >= f_hi, so the segment is strictly decreasing.
        (lo + (f_lo - target) / (f_lo - f_hi) * (hi - lo)).min(hi)
    };
    let clipped_values: Vec<f64> = omega.iter().map(|&w| clip(w - gamma_star)).collect();
    let achieved_trace = clipped_values.iter().sum();
    ClipSolution {
        gamma_star,
        clipped_values,
        achieved_trace,
    }
}

/// Projection of `W` onto the constraint set, using signed eigenvalues of `W`.
pub fn project_fantope(w: &SymMatrix, k: usize) -> Result<SymMatrix> {
    Ok(project_fantope_detailed(w, k)?.0)
}

/// Like [`project_fantope`], also returning the decomposition and clipping used.
pub fn project_fantope_detailed(w: &SymMatrix, k: usize) -> Result<(SymMatrix, EigenDecomposition, ClipSolution)> {
    if k == 0 || k > w.dim() {
        return Err(Error::InvalidRank(format!(
            "need 1 <= K <= d, got K = {k} with d = {}",
            w.dim()
        )));
    }
    let eig = sym_eigen(w)?;
    let clip = solve_gamma(&eig.values, k);
    let h = eig.reconstruct_with(&clip.clipped_values);
    Ok((h, eig, clip))
}
