//! Sparse SIR / PFC fits, kernel prediction, and cross-validated tuning.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{fit_cov, sample_cov, BasisKind, BasisSpec, ConditionalMethod, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, SymMatrix};
use crate::solver::{Problem, SolveReport, SolverConfig, SolverState};

/// Diagonal entries of `Π̂` above this count as selected.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_GRID_SIZE: usize = 20;

/// Which matrix plays the role of `M` in the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Estimator {
    Sir(ConditionalMethod),
    Pfc(BasisSpec),
}

impl Estimator {
    pub fn moment(&self, data: &Dataset) -> Result<SymMatrix> {
        match self {
            Estimator::Sir(method) => crate::covariance::conditional_cov(data, *method),
            Estimator::Pfc(basis) => fit_cov(data, *basis),
        }
    }

    /// Slice count that constrains fold sizes, or 0.
    pub fn slice_count(&self) -> usize {
        match self {
            Estimator::Sir(method) => method.slice_count(),
            Estimator::Pfc(BasisSpec {
                kind: BasisKind::SliceIndicator,
                order,
            }) => *order,
            Estimator::Pfc(_) => 0,
        }
    }

    fn check_rank(&self, k: usize) -> Result<()> {
        if let Estimator::Pfc(basis) = self {
            if k >= basis.order {
                return Err(Error::InvalidRank(format!(
                    "PFC needs K < r, got K = {k} with r = {}",
                    basis.order
                )));
            }
        }
        Ok(())
    }
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator::Sir(ConditionalMethod::default())
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Sir(m) => write!(f, "sir:{m}"),
            Estimator::Pfc(b) => write!(f, "pfc:{b}"),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    /// `sir:diff`, `sir:slice:5`, `pfc:poly:2`, `pfc:slice:5`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("sir", rest)) => Ok(Estimator::Sir(rest.parse()?)),
            Some(("pfc", rest)) => Ok(Estimator::Pfc(rest.parse()?)),
            _ => Err(Error::InvalidInput(format!("unknown estimator '{s}'"))),
        }
    }
}

impl From<Estimator> for String {
    fn from(e: Estimator) -> Self {
        e.to_string()
    }
}

impl TryFrom<String> for Estimator {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub pi_hat: SymMatrix,
    /// `d x K`, the eigenvectors of `Π̂` for its `K` largest eigenvalues.
    pub directions: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// 0-based indices with `Π̂_jj` above the threshold, ascending.
    pub support: Vec<usize>,
    pub support_threshold: f64,
    pub k: usize,
    pub rho: f64,
    pub report: SolveReport,
}

impl FitResult {
    pub fn from_report(report: SolveReport, k: usize, rho: f64, support_threshold: f64) -> Result<Self> {
        let pi_hat = report.pi_hat.clone();
        let eig = sym_eigen(&pi_hat)?;
        let support = support_of(&pi_hat, support_threshold);
        Ok(Self {
            directions: eig.leading_vectors(k),
            eigenvalues: eig.values[..k].to_vec(),
            support,
            support_threshold,
            k,
            rho,
            pi_hat,
            report,
        })
    }

    pub fn d(&self) -> usize {
        self.pi_hat.dim()
    }

    /// Directions whose eigenvalue exceeds the support threshold. Eigenvectors
    /// of `Π̂` for a zero eigenvalue are arbitrary and carry no information.
    pub fn informative_directions(&self) -> DMatrix<f64> {
        let keep: Vec<usize> = (0..self.k)
            .filter(|&j| self.eigenvalues[j] > self.support_threshold)
            .collect();
        self.directions.select_columns(keep.iter())
    }

    /// Kernel predictor on `R̂(x) = Vᵀx` over the informative directions; with
    /// none it predicts the training mean.
    pub fn predictor<'a>(&self, train: &'a Dataset) -> Result<Predictor<'a>> {
        Predictor::new(&self.informative_directions(), train)
    }
}

/// `{ j : Π_jj > threshold }`.
pub fn support_of(pi: &SymMatrix, threshold: f64) -> Vec<usize> {
    (0..pi.dim()).filter(|&j| pi.get(j, j) > threshold).collect()
}

pub fn fit_sir(data: &Dataset, cfg: &SolverConfig, method: ConditionalMethod) -> Result<FitResult> {
    fit(data, cfg, Estimator::Sir(method))
}

pub fn fit_pfc(data: &Dataset, cfg: &SolverConfig, basis: BasisSpec) -> Result<FitResult> {
    fit(data, cfg, Estimator::Pfc(basis))
}

pub fn fit(data: &Dataset, cfg: &SolverConfig, estimator: Estimator) -> Result<FitResult> {
    fit_with_threshold(data, cfg, estimator, DEFAULT_SUPPORT_THRESHOLD)
}

pub fn fit_with_threshold(
    data: &Dataset,
    cfg: &SolverConfig,
    estimator: Estimator,
    support_threshold: f64,
) -> Result<FitResult> {
    cfg.validate(data.d())?;
    estimator.check_rank(cfg.k)?;
    let problem = problem_for(data, estimator)?;
    // For ρ ≥ ‖M‖_max the minimizer is Π = 0; starting elsewhere, the step-norm
    // rule can stop short of it.
    let start = if cfg.rho >= problem.zero_threshold() {
        SolverState::zero(data.d())
    } else {
        SolverState::initial(data.d())
    };
    let report = problem.solve_from(cfg, &start)?;
    FitResult::from_report(report, cfg.k, cfg.rho, support_threshold)
}

fn problem_for(data: &Dataset, estimator: Estimator) -> Result<Problem> {
    let m = estimator.moment(data)?;
    let sigma = sample_cov(data.x())?;
    Problem::new(m, sigma)
}

/// Kernel regression of `y` on the reduced predictors `R̂(x) = Vᵀx`.
#[derive(Debug, Clone)]
pub struct Predictor<'a> {
    directions: DMatrix<f64>,
    reduced: DMatrix<f64>,
    y: &'a [f64],
}

impl<'a> Predictor<'a> {
    pub fn new(directions: &DMatrix<f64>, train: &'a Dataset) -> Result<Self> {
        if directions.nrows() != train.d() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rows", train.d()),
                found: format!("{} rows", directions.nrows()),
            });
        }
        Ok(Self {
            directions: directions.clone(),
            reduced: train.x() * directions,
            y: train.y(),
        })
    }

    fn squared_distances(&self, x_star: &[f64]) -> Result<Vec<f64>> {
        if x_star.len() != self.directions.nrows() {
            return Err(Error::DimensionMismatch {
                expected: format!("query of length {}", self.directions.nrows()),
                found: format!("length {}", x_star.len()),
            });
        }
        let r_star = self.directions.tr_mul(&DVector::from_column_slice(x_star));
        Ok(self
            .reduced
            .row_iter()
            .map(|row| row.iter().zip(r_star.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect())
    }

    /// Normalized weights `exp(-½‖R̂(x*) − R̂(x_i)‖²)`.
    ///
    /// Exponents are shifted by the smallest distance before exponentiating,
    /// which leaves the normalized weights unchanged and keeps the largest one
    /// at `exp(0)`.
    pub fn weights(&self, x_star: &[f64]) -> Result<Vec<f64>> {
        let dist = self.squared_distances(x_star)?;
        Ok(normalized_weights(&dist))
    }

    pub fn predict(&self, x_star: &[f64]) -> Result<f64> {
        let dist = self.squared_distances(x_star)?;
        let w = normalized_weights(&dist);
        // Centering on the nearest response makes a constant response reproduce exactly.
        let anchor = self.y[argmin(&dist)];
        let shift: f64 = w.iter().zip(self.y).map(|(wi, yi)| wi * (yi - anchor)).sum();
        Ok(anchor + shift)
    }
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn normalized_weights(dist: &[f64]) -> Vec<f64> {
    let nearest = argmin(dist);
    let floor = dist[nearest];
    let raw: Vec<f64> = dist.iter().map(|&s| (-0.5 * (s - floor)).exp()).collect();
    let total: f64 = raw.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        // Only reachable with non-finite distances; fall back to the nearest neighbour.
        let mut w = vec![0.0; dist.len()];
        w[nearest] = 1.0;
        return w;
    }
    raw.into_iter().map(|v| v / total).collect()
}

/// `Ê(y | x = x*)` from a fit on `train`.
pub fn predict_mean(fit: &FitResult, train: &Dataset, x_star: &[f64]) -> Result<f64> {
    fit.predictor(train)?.predict(x_star)
}

/// `count` log-spaced values over `[0.01, 4]·√(log d / n)`, descending.
pub fn default_rho_grid(n: usize, d: usize, count: usize) -> Vec<f64> {
    rho_grid(n, d, 0.01, 4.0, count)
}

/// `count` log-spaced multiples of `√(log d / n)` from `hi` down to `lo`.
pub fn rho_grid(n: usize, d: usize, lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let base = ((d.max(2) as f64).ln() / n as f64).sqrt();
    match count {
        0 => Vec::new(),
        1 => vec![hi * base],
        _ => (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                base * (hi.ln() + t * (lo.ln() - hi.ln())).exp()
            })
            .collect(),
    }
}

/// Contiguous blocks of a seeded permutation; the first `n mod M` folds get one extra point.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::InvalidFold(format!(
            "need 2 <= M <= n, got M = {folds}, n = {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for m in 0..folds {
        let len = base + usize::from(m < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvConfig {
    pub k_grid: Vec<usize>,
    pub rho_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub estimator: Estimator,
    /// `rho` and `k` are overridden per grid point.
    pub solver: SolverConfig,
}

impl CvConfig {
    pub fn new(k_grid: Vec<usize>, rho_grid: Vec<f64>) -> Self {
        Self {
            k_grid,
            rho_grid,
            folds: DEFAULT_FOLDS,
            seed: 0,
            estimator: Estimator::default(),
            solver: SolverConfig::new(0.0, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub grid: Vec<GridPoint>,
    pub errors: Vec<f64>,
    /// `fold_errors[g][m]`: mean squared error on fold `m` for grid point `g`.
    pub fold_errors: Vec<Vec<f64>>,
    pub best: GridPoint,
    pub best_index: usize,
    pub folds: usize,
    /// Fits (over all folds) that hit `max_iter`.
    pub nonconverged: usize,
}

/// `M`-fold cross-validation over `K × ρ` with folds from `cfg.seed`.
pub fn cross_validate(data: &Dataset, cfg: &CvConfig) -> Result<CvReport> {
    let folds = make_folds(data.n(), cfg.folds, cfg.seed)?;
    cross_validate_with_folds(data, cfg, &folds)
}

/// As [`cross_validate`] with caller-supplied folds (disjoint, nonempty).
pub fn cross_validate_with_folds(data: &Dataset, cfg: &CvConfig, folds: &[Vec<usize>]) -> Result<CvReport> {
    validate_cv(data, cfg, folds)?;
    // Each ρ path is solved from the largest value down, warm-starting each solve.
    let mut order: Vec<usize> = (0..cfg.rho_grid.len()).collect();
    order.sort_by(|&a, &b| cfg.rho_grid[b].total_cmp(&cfg.rho_grid[a]));

    let tasks: Vec<(usize, usize)> = (0..folds.len())
        .flat_map(|m| (0..cfg.k_grid.len()).map(move |ki| (m, ki)))
        .collect();
    let results: Vec<Result<(Vec<f64>, usize)>> = tasks
        .par_iter()
        .map(|&(m, ki)| fold_path(data, cfg, folds, m, cfg.k_grid[ki], &order))
        .collect();

    let n_rho = cfg.rho_grid.len();
    let mut grid = Vec::new();
    let mut fold_errors = vec![vec![0.0; folds.len()]; cfg.k_grid.len() * n_rho];
    let mut nonconverged = 0;
    for (&(m, ki), res) in tasks.iter().zip(results) {
        let (errs, nc) = res?;
        nonconverged += nc;
        for (ri, e) in errs.into_iter().enumerate() {
            fold_errors[ki * n_rho + ri][m] = e;
        }
    }
    for &k in &cfg.k_grid {
        for &rho in &cfg.rho_grid {
            grid.push(GridPoint { k, rho });
        }
    }
    let errors: Vec<f64> = fold_errors
        .iter()
        .map(|f| f.iter().sum::<f64>() / folds.len() as f64)
        .collect();
    let best_index = select_best(&grid, &errors);
    Ok(CvReport {
        best: grid[best_index].clone(),
        best_index,
        grid,
        errors,
        fold_errors,
        folds: folds.len(),
        nonconverged,
    })
}

fn validate_cv(data: &Dataset, cfg: &CvConfig, folds: &[Vec<usize>]) -> Result<()> {
    if cfg.k_grid.is_empty() || cfg.rho_grid.is_empty() {
        return Err(Error::InvalidInput("empty tuning grid".into()));
    }
    if cfg.rho_grid.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::InvalidParameter(
            "rho values must be finite and nonnegative".into(),
        ));
    }
    for &k in &cfg.k_grid {
        cfg.solver.with_k(k).validate(data.d())?;
        cfg.estimator.check_rank(k)?;
    }
    if folds.len() < 2 {
        return Err(Error::InvalidFold(format!(
            "need at least 2 folds, got {}",
            folds.len()
        )));
    }
    let min_size = 10.max(2 * cfg.estimator.slice_count());
    let mut seen = vec![false; data.n()];
    for (m, fold) in folds.iter().enumerate() {
        if fold.len() < min_size {
            return Err(Error::InvalidFold(format!(
                "fold {m} has {} points, need at least {min_size}",
                fold.len()
            )));
        }
        for &i in fold {
            if i >= data.n() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidFold(format!("index {i} out of range or repeated")));
            }
        }
    }
    Ok(())
}

/// Per-ρ validation errors on fold `m` for one `K`, in grid order.
fn fold_path(
    data: &Dataset,
    cfg: &CvConfig,
    folds: &[Vec<usize>],
    m: usize,
    k: usize,
    order: &[usize],
) -> Result<(Vec<f64>, usize)> {
    let held_out = &folds[m];
    let mut in_fold = vec![false; data.n()];
    held_out.iter().for_each(|&i| in_fold[i] = true);
    let train_idx: Vec<usize> = (0..data.n()).filter(|&i| !in_fold[i]).collect();
    let train = data.select(&train_idx)?;
    let problem = problem_for(&train, cfg.estimator)?;

    let mut errors = vec![0.0; order.len()];
    let mut nonconverged = 0;
    // Π = H = Γ = 0 is the exact solution for ρ ≥ max |M_ij|. Below that the
    // first solve starts from the standard Π = H = I, and later ones warm-start
    // from their predecessor.
    let zero_above = problem.zero_threshold();
    let mut state: Option<SolverState> = None;
    for &ri in order {
        let solver = SolverConfig {
            rho: cfg.rho_grid[ri],
            k,
            ..cfg.solver
        };
        let start = match &state {
            Some(s) => s.clone(),
            None if solver.rho >= zero_above => SolverState::zero(data.d()),
            None => SolverState::initial(data.d()),
        };
        let report = problem.solve_from(&solver, &start)?;
        nonconverged += usize::from(!report.converged);
        if solver.rho < zero_above {
            state = Some(report.state.clone());
        }
        let fit = FitResult::from_report(report, k, solver.rho, DEFAULT_SUPPORT_THRESHOLD)?;
        let predictor = fit.predictor(&train)?;
        let mut sse = 0.0;
        for &i in held_out {
            let x: Vec<f64> = data.x().row(i).iter().copied().collect();
            let r = data.y()[i] - predictor.predict(&x)?;
            sse += r * r;
        }
        errors[ri] = sse / held_out.len() as f64;
    }
    Ok((errors, nonconverged))
}

/// Minimal error; ties go to smaller `K`, then larger `ρ`.
fn select_best(grid: &[GridPoint], errors: &[f64]) -> usize {
    (0..grid.len())
        .min_by(|&a, &b| {
            errors[a]
                .total_cmp(&errors[b])
                .then(grid[a].k.cmp(&grid[b].k))
                .then(grid[b].rho.total_cmp(&grid[a].rho))
        })
        .expect("grid is nonempty")
}
