//! Replicate studies: CV-tuned support recovery (`table1`) and subspace distance against `n` (`fig1`).

use serde::Serialize;

use super::io::format_value;
use crate::covariance::{ConditionalMethod, Dataset};
use crate::error::{Error, Result};
use crate::linalg::orthonormal_columns;
use crate::metrics::{score_correlation, subspace_distance, support_rates};
use crate::sdr::{cross_validate, fit, rho_grid, CvConfig, Estimator};
use crate::simulate::{run_replicates, Aggregate, GroundTruth, ReplicateTable, Setting, SimSpec};
use crate::solver::{SolverConfig, DEFAULT_EPSILON, DEFAULT_MAX_ITER, DEFAULT_NU};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverSettings {
    pub nu: f64,
    pub epsilon: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            nu: DEFAULT_NU,
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl SolverSettings {
    pub fn config(&self, rho: f64, k: usize) -> SolverConfig {
        SolverConfig {
            rho,
            k,
            nu: self.nu,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1Config {
    pub setting: Setting,
    pub n: usize,
    pub d: usize,
    pub replicates: usize,
    pub seed: u64,
    pub method: ConditionalMethod,
    pub k_grid: Vec<usize>,
    /// The ρ grid is `rho_grid_size` log-spaced multiples of `√(log d / n)` in
    /// `[rho_min_mult, rho_max_mult]`.
    pub rho_grid_size: usize,
    pub rho_min_mult: f64,
    pub rho_max_mult: f64,
    pub folds: usize,
    pub solver: SolverSettings,
    pub parallel: usize,
}

impl Table1Config {
    pub fn rho_values(&self) -> Vec<f64> {
        rho_grid(self.n, self.d, self.rho_min_mult, self.rho_max_mult, self.rho_grid_size)
    }
}

pub const TABLE1_COLUMNS: [&str; 8] = [
    "k",
    "rho",
    "tpr",
    "fpr",
    "corr",
    "iterations",
    "converged",
    "cv_nonconverged",
];

/// CV over `(K, ρ)`, refit on the full sample, then score support and correlation.
pub fn table1_replicate(cfg: &Table1Config, data: &Dataset, truth: &GroundTruth, cv_seed: u64) -> Result<Vec<f64>> {
    let estimator = Estimator::Sir(cfg.method);
    let cv = CvConfig {
        k_grid: cfg.k_grid.clone(),
        rho_grid: cfg.rho_values(),
        folds: cfg.folds,
        seed: cv_seed,
        estimator,
        solver: cfg.solver.config(0.0, 1),
    };
    let report = cross_validate(data, &cv)?;
    let best = report.best;
    let result = fit(data, &cfg.solver.config(best.rho, best.k), estimator)?;
    let rates = support_rates(&truth.support, &result.support, data.d())?;
    let informative = result.informative_directions();
    // A zero estimate has no direction to correlate with.
    let corr = if informative.ncols() == 0 {
        0.0
    } else {
        score_correlation(data.x(), &truth.directions, &informative)?
    };
    Ok(vec![
        best.k as f64,
        best.rho,
        rates.tpr,
        rates.fpr,
        corr,
        result.report.iterations as f64,
        f64::from(u8::from(result.report.converged)),
        report.nonconverged as f64,
    ])
}

pub fn run_table1(cfg: &Table1Config) -> Result<ReplicateTable> {
    let template = SimSpec::new(cfg.setting, cfg.n, cfg.d, cfg.seed)?;
    // Folds are seeded with the replicate's data seed.
    run_replicates(
        &template,
        cfg.replicates,
        &TABLE1_COLUMNS,
        cfg.parallel,
        |data, truth, seed| table1_replicate(cfg, data, truth, seed),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig1Config {
    pub setting: Setting,
    pub dims: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub method: ConditionalMethod,
    /// `ρ = rho_mult · √(log d / n)`.
    pub rho_mult: f64,
    pub solver: SolverSettings,
    pub parallel: usize,
}

pub const FIG1_COLUMNS: [&str; 5] = ["distance", "rho", "informative", "iterations", "converged"];

pub fn fig1_replicate(cfg: &Fig1Config, data: &Dataset, truth: &GroundTruth) -> Result<Vec<f64>> {
    let rho = cfg.rho_mult * rate(data.n(), data.d());
    let result = fit(data, &cfg.solver.config(rho, truth.k), Estimator::Sir(cfg.method))?;
    let basis = orthonormal_columns(&truth.directions)?;
    // Eigenvectors of Π̂ for a zero eigenvalue are arbitrary, so only the
    // informative ones enter the projector; a zero estimate scores √K.
    let est = result.informative_directions();
    let distance = if est.ncols() == truth.k {
        subspace_distance(&basis, &est)?
    } else {
        (&basis * basis.transpose() - &est * est.transpose()).norm()
    };
    Ok(vec![
        distance,
        rho,
        est.ncols() as f64,
        result.report.iterations as f64,
        f64::from(u8::from(result.report.converged)),
    ])
}

/// `√(log d / n)`.
pub fn rate(n: usize, d: usize) -> f64 {
    ((d as f64).ln() / n as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Fig1Cell {
    pub d: usize,
    pub n: usize,
    pub table: ReplicateTable,
}

pub fn run_fig1(cfg: &Fig1Config) -> Result<Vec<Fig1Cell>> {
    let mut cells = Vec::new();
    for &d in &cfg.dims {
        for &n in &cfg.sample_sizes {
            let template = SimSpec::new(cfg.setting, n, d, cfg.seed)?;
            let table = run_replicates(
                &template,
                cfg.replicates,
                &FIG1_COLUMNS,
                cfg.parallel,
                |data, truth, _| fig1_replicate(cfg, data, truth),
            )?;
            cells.push(Fig1Cell { d, n, table });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn line_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let m = x.len();
    if m < 2 || y.len() != m {
        return Err(Error::InvalidInput("need at least two (x, y) pairs".into()));
    }
    let (mx, my) = (x.iter().sum::<f64>() / m as f64, y.iter().sum::<f64>() / m as f64);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("x values are all equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Per-replicate CSV rows: `prefix..., replicate, seed, status, metrics...`.
pub fn replicate_rows(table: &ReplicateTable, prefix: &[String]) -> Vec<Vec<String>> {
    table
        .rows
        .iter()
        .map(|row| {
            let mut rec = prefix.to_vec();
            rec.push(row.replicate.to_string());
            rec.push(row.seed.to_string());
            match &row.outcome {
                Ok(values) => {
                    rec.push("ok".into());
                    rec.extend(values.iter().map(|&v| format_value(v)));
                }
                Err(msg) => {
                    rec.push(format!("error: {msg}"));
                    rec.extend(std::iter::repeat_n(String::new(), table.columns.len()));
                }
            }
            rec
        })
        .collect()
}

/// Summary rows `prefix..., metric, mean, se, count`; an absent SE is an empty field.
pub fn aggregate_rows(aggregates: &[Aggregate], prefix: &[String]) -> Vec<Vec<String>> {
    aggregates
        .iter()
        .map(|a| {
            let mut rec = prefix.to_vec();
            rec.push(a.column.clone());
            rec.push(format_value(a.mean));
            rec.push(a.se.map(format_value).unwrap_or_default());
            rec.push(a.count.to_string());
            rec
        })
        .collect()
}

pub fn aggregate_of<'a>(aggregates: &'a [Aggregate], column: &str) -> Option<&'a Aggregate> {
    aggregates.iter().find(|a| a.column == column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_exact_and_noisy() {
        let f = line_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let f = line_fit(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!((f.r_squared - 0.2).abs() < 1e-12);
        assert!(line_fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn table1_replicate_runs_small() {
        let cfg = Table1Config {
            setting: Setting::Linear,
            n: 60,
            d: 8,
            replicates: 1,
            seed: 0,
            method: ConditionalMethod::Slice(5),
            k_grid: vec![1, 2],
            rho_grid_size: 3,
            rho_min_mult: 0.2,
            rho_max_mult: 1.0,
            folds: 3,
            solver: SolverSettings::default(),
            parallel: 1,
        };
        let table = run_table1(&cfg).unwrap();
        let row = table.rows[0].outcome.as_ref().unwrap();
        assert_eq!(row.len(), TABLE1_COLUMNS.len());
        assert!(row[2] >= 0.0 && row[2] <= 1.0);
    }
}
