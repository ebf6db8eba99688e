//! Linearized ADMM for
//!
//! ```text
//! minimize  -tr(M Π) + ρ‖Π‖₁
//! subject to S Π S ∈ {H ⪰ 0 : ‖H‖_* ≤ K, ‖H‖_sp ≤ 1},   S = Σ^{1/2}
//! ```
//!
//! Each iteration is a soft-thresholding step on `Π`, a Fantope projection for
//! the splitting variable `H`, and a scaled dual update for `Γ`. The quadratic
//! coupling term is linearized with proximal weight `τ = 4νλ_max(Σ)²`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fantope::solve_gamma;
use crate::linalg::{max_asymmetry, soft_scalar, sqrt_psd_from_eigen, sym_eigen, symmetrize_in_place, SymMatrix};

pub const DEFAULT_NU: f64 = 1.0;
pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rho: f64,
    pub k: usize,
    pub nu: f64,
    pub epsilon: f64,
    pub max_iter: usize,
}

impl SolverConfig {
    pub fn new(rho: f64, k: usize) -> Self {
        Self {
            rho,
            k,
            nu: DEFAULT_NU,
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn with_rho(self, rho: f64) -> Self {
        Self { rho, ..self }
    }

    pub fn with_k(self, k: usize) -> Self {
        Self { k, ..self }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidParameter(format!("rho must be >= 0, got {}", self.rho)));
        }
        if self.k == 0 || self.k > d {
            return Err(Error::InvalidRank(format!(
                "need 1 <= K <= d, got K = {} with d = {d}",
                self.k
            )));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("nu must be > 0, got {}", self.nu)));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Iterates `(Π, H, Γ)` of the splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub pi: SymMatrix,
    pub h: SymMatrix,
    pub gamma: SymMatrix,
    pub iter: usize,
    pub last_step_norm: f64,
}

impl SolverState {
    /// `Π = H = I`, `Γ = 0`.
    pub fn initial(d: usize) -> Self {
        Self {
            pi: SymMatrix::identity(d),
            h: SymMatrix::identity(d),
            gamma: SymMatrix::zeros(d),
            iter: 0,
            last_step_norm: f64::INFINITY,
        }
    }

    /// `Π = H = Γ = 0`, the exact solution whenever `ρ ≥ max |M_ij|`.
    pub fn zero(d: usize) -> Self {
        Self {
            pi: SymMatrix::zeros(d),
            h: SymMatrix::zeros(d),
            gamma: SymMatrix::zeros(d),
            iter: 0,
            last_step_norm: f64::INFINITY,
        }
    }

    pub fn dim(&self) -> usize {
        self.pi.dim()
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub pi_hat: SymMatrix,
    pub converged: bool,
    pub iterations: usize,
    pub final_step_norm: f64,
    /// `-tr(MΠ) + ρ‖Π‖₁` after every iteration.
    pub objective_trace: Vec<f64>,
    /// Final iterates, usable as a warm start.
    pub state: SolverState,
}

/// Problem data with the spectral decomposition of `Σ` precomputed, so a path
/// of solves over `ρ` or `K` pays for it once.
///
/// Iterations run in the eigenbasis `Q` (`d x r`) of the range of `Σ`, where
/// `S = Q diag(√λ) Qᵀ`. Every `S X S` only sees `QᵀXQ`, and once `H` and `Γ`
/// have been updated they lie in that range too, so `H` and `Γ` are carried as
/// `r x r` matrices and the Fantope projection is an `r`-dimensional
/// eigenproblem. With `d > n` this is the difference between a `d`- and an
/// `(n−1)`-dimensional eigensolve per iteration.
#[derive(Debug, Clone)]
pub struct Problem {
    m: SymMatrix,
    sigma: SymMatrix,
    sqrt_sigma: SymMatrix,
    lambda_max: f64,
    basis: DMatrix<f64>,
    roots: DVector<f64>,
}

/// Eigenvalues of `Σ` at or below this fraction of `λ_max` are treated as zero.
const RANGE_REL_TOL: f64 = 1e-12;

impl Problem {
    pub fn new(m: SymMatrix, sigma: SymMatrix) -> Result<Self> {
        if m.dim() != sigma.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("{0}x{0}", sigma.dim()),
                found: format!("{0}x{0}", m.dim()),
            });
        }
        if !m.is_finite() {
            return Err(Error::InvalidInput("M has non-finite entries".into()));
        }
        let eig = sym_eigen(&sigma)?;
        let lambda_max = eig.max_value();
        if lambda_max.is_nan() || lambda_max <= 0.0 {
            return Err(Error::InvalidInput(
                "covariance has no positive eigenvalue; step size tau would be 0".into(),
            ));
        }
        let sqrt_sigma = sqrt_psd_from_eigen(&eig)?;
        let rank = eig
            .values
            .iter()
            .take_while(|&&v| v > RANGE_REL_TOL * lambda_max)
            .count();
        let basis = eig.leading_vectors(rank);
        let roots = DVector::from_fn(rank, |i, _| eig.values[i].sqrt());
        Ok(Self {
            m,
            sigma,
            sqrt_sigma,
            lambda_max,
            basis,
            roots,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    /// Numerical rank of `Σ`.
    pub fn rank(&self) -> usize {
        self.roots.len()
    }

    pub fn m(&self) -> &SymMatrix {
        &self.m
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    pub fn sqrt_sigma(&self) -> &SymMatrix {
        &self.sqrt_sigma
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `max |M_ij|`. Since `tr(MΠ) ≤ max|M_ij|·‖Π‖₁`, `Π̂ = 0` for any `ρ` at or above it.
    pub fn zero_threshold(&self) -> f64 {
        self.m.as_matrix().amax()
    }

    pub fn tau(&self, nu: f64) -> f64 {
        4.0 * nu * self.lambda_max * self.lambda_max
    }

    /// `-tr(MΠ) + ρ‖Π‖₁`.
    pub fn objective(&self, pi: &SymMatrix, rho: f64) -> f64 {
        objective(self.m.as_matrix(), pi.as_matrix(), rho)
    }

    pub fn solve(&self, cfg: &SolverConfig) -> Result<SolveReport> {
        self.solve_from(cfg, &SolverState::initial(self.dim()))
    }

    /// Runs from the given iterates; the iteration counter restarts at zero.
    ///
    /// Components of `H` and `Γ` outside the range of `Σ` are discarded. States
    /// produced by this solver have none after their first iteration.
    pub fn solve_from(&self, cfg: &SolverConfig, start: &SolverState) -> Result<SolveReport> {
        self.check(cfg, start)?;
        let mut current = self.reduce_state(start);
        let mut step = start.last_step_norm;
        let mut objective_trace = Vec::new();
        let mut converged = false;
        let mut iter = 0;
        while iter < cfg.max_iter {
            iter += 1;
            let (next, stats) = self.iterate(cfg, &current, iter)?;
            step = stats.step;
            current = next;
            objective_trace.push(stats.objective);
            debug_assert!(max_asymmetry(&current.pi) <= 1e-10);
            debug_assert!(max_asymmetry(&current.h) <= 1e-10);
            debug_assert!(max_asymmetry(&current.gamma) <= 1e-10);
            if step <= cfg.epsilon {
                converged = true;
                break;
            }
        }
        let state = self.expand_state(current, iter, step);
        Ok(SolveReport {
            pi_hat: state.pi.clone(),
            converged,
            iterations: iter,
            final_step_norm: step,
            objective_trace,
            state,
        })
    }

    /// A single iteration from `state`, exposed for diagnostics and tests.
    pub fn step(&self, cfg: &SolverConfig, state: &SolverState) -> Result<SolverState> {
        self.check(cfg, state)?;
        let current = self.reduce_state(state);
        let (next, stats) = self.iterate(cfg, &current, state.iter + 1)?;
        Ok(self.expand_state(next, state.iter + 1, stats.step))
    }

    fn check(&self, cfg: &SolverConfig, state: &SolverState) -> Result<()> {
        cfg.validate(self.dim())?;
        if state.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("{0}x{0} state", self.dim()),
                found: format!("{0}x{0} state", state.dim()),
            });
        }
        Ok(())
    }

    fn reduce_state(&self, state: &SolverState) -> Reduced {
        let pi = state.pi.as_matrix().clone();
        let sps = self.scale_by_roots(self.reduce(&pi, &nonzero_columns(&pi)));
        Reduced {
            h: self.reduce_dense(state.h.as_matrix()),
            gamma: self.reduce_dense(state.gamma.as_matrix()),
            pi,
            sps,
        }
    }

    fn expand_state(&self, reduced: Reduced, iter: usize, step: f64) -> SolverState {
        SolverState {
            h: SymMatrix::from_symmetric(self.expand(&reduced.h)),
            gamma: SymMatrix::from_symmetric(self.expand(&reduced.gamma)),
            pi: SymMatrix::from_symmetric(reduced.pi),
            iter,
            last_step_norm: step,
        }
    }

    /// `Qᵀ X Q` for `X` whose nonzero columns (and rows) are `active`.
    fn reduce(&self, x: &DMatrix<f64>, active: &[usize]) -> DMatrix<f64> {
        if active.is_empty() {
            return DMatrix::zeros(self.rank(), self.rank());
        }
        if 2 * active.len() >= x.nrows() {
            return self.reduce_dense(x);
        }
        let q_a = self.basis.select_rows(active.iter());
        let x_aa = x.select_rows(active.iter()).select_columns(active.iter());
        let mut out = q_a.transpose() * (x_aa * &q_a);
        symmetrize_in_place(&mut out);
        out
    }

    fn reduce_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let q = &self.basis;
        let mut out = q.transpose() * (x * q);
        symmetrize_in_place(&mut out);
        out
    }

    /// `Q X Qᵀ`.
    fn expand(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let q = &self.basis;
        let mut out = (q * x) * q.transpose();
        symmetrize_in_place(&mut out);
        out
    }

    /// `diag(√λ) X diag(√λ)`, which is `S X S` in range coordinates.
    fn scale_by_roots(&self, mut x: DMatrix<f64>) -> DMatrix<f64> {
        let r = &self.roots;
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                x[(i, j)] *= r[i] * r[j];
            }
        }
        x
    }

    fn iterate(&self, cfg: &SolverConfig, cur: &Reduced, iteration: usize) -> Result<(Reduced, StepStats)> {
        let tau = self.tau(cfg.nu);

        // Σ Π Σ − S (H − Γ) S  =  S (S Π S − H + Γ) S
        let residual = &cur.sps - &cur.h + &cur.gamma;
        let coupling = self.expand(&self.scale_by_roots(residual));
        let (pi, stats, active) = self.update_pi(cfg, tau, &cur.pi, &coupling);
        if !(stats.step.is_finite() && stats.objective.is_finite()) {
            return Err(Error::Diverged { iteration });
        }

        let sps = self.scale_by_roots(self.reduce(&pi, &active));
        let mut w = &cur.gamma + &sps;
        symmetrize_in_place(&mut w);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration });
        }
        let eig = sym_eigen(&SymMatrix::from_symmetric(w))?;
        let clip = solve_gamma(&eig.values, cfg.k);
        let h = eig.reconstruct_with(&clip.clipped_values).into_matrix();

        let mut gamma = &cur.gamma + &sps - &h;
        symmetrize_in_place(&mut gamma);
        Ok((Reduced { pi, h, gamma, sps }, stats))
    }

    /// Step (a), in one pass that also yields the step norm, the objective,
    /// and the nonzero columns of the new `Π`.
    fn update_pi(
        &self,
        cfg: &SolverConfig,
        tau: f64,
        old: &DMatrix<f64>,
        coupling: &DMatrix<f64>,
    ) -> (DMatrix<f64>, StepStats, Vec<usize>) {
        let d = old.nrows();
        let (inv_tau, coef, thresh) = (1.0 / tau, cfg.nu / tau, cfg.rho / tau);
        let mut pi = DMatrix::zeros(d, d);
        let (mut step_sq, mut gain, mut l1) = (0.0, 0.0, 0.0);
        let mut active = Vec::new();
        let m = self.m.as_matrix();
        for j in 0..d {
            let (o, mc, c) = (old.column(j), m.column(j), coupling.column(j));
            let mut p = pi.column_mut(j);
            let mut nonzero = false;
            for i in 0..d {
                let v = soft_scalar(o[i] + mc[i] * inv_tau - c[i] * coef, thresh);
                p[i] = v;
                let delta = v - o[i];
                step_sq += delta * delta;
                gain += mc[i] * v;
                l1 += v.abs();
                nonzero |= v != 0.0;
            }
            if nonzero {
                active.push(j);
            }
        }
        let stats = StepStats {
            step: step_sq.sqrt(),
            objective: -gain + cfg.rho * l1,
        };
        (pi, stats, active)
    }
}

struct StepStats {
    step: f64,
    objective: f64,
}

/// `Π` in the original coordinates; `H`, `Γ`, and `S Π S` in range coordinates.
struct Reduced {
    pi: DMatrix<f64>,
    h: DMatrix<f64>,
    gamma: DMatrix<f64>,
    sps: DMatrix<f64>,
}

fn nonzero_columns(x: &DMatrix<f64>) -> Vec<usize> {
    (0..x.ncols())
        .filter(|&j| x.column(j).iter().any(|&v| v != 0.0))
        .collect()
}

fn objective(m: &DMatrix<f64>, pi: &DMatrix<f64>, rho: f64) -> f64 {
    -m.dot(pi) + rho * pi.iter().map(|v| v.abs()).sum::<f64>()
}

/// Solves from the standard initialization `Π = H = I`, `Γ = 0`.
pub fn ladmm_solve(m: &SymMatrix, sigma: &SymMatrix, cfg: &SolverConfig) -> Result<SolveReport> {
    Problem::new(m.clone(), sigma.clone())?.solve(cfg)
}
