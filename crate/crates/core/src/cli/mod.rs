//! Command-line front end: `simulate`, `fit`, `tune`, and `benchmark`.
//!
//! Exit codes: 0 on success, 1 when a numerical routine fails (divergence,
//! eigensolver failure, too many failed replicates), 2 for usage, input, and
//! I/O errors.

pub mod bench;
pub mod io;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::covariance::{BasisSpec, ConditionalMethod};
use crate::error::Error;
use crate::linalg::orthonormal_columns;
use crate::sdr::{
    cross_validate, default_rho_grid, fit_with_threshold, CvConfig, CvReport, Estimator, DEFAULT_FOLDS,
    DEFAULT_GRID_SIZE, DEFAULT_SUPPORT_THRESHOLD,
};
use crate::simulate::{generate, Setting, SimSpec};
use crate::solver::{DEFAULT_EPSILON, DEFAULT_MAX_ITER, DEFAULT_NU};
use bench::{
    aggregate_of, aggregate_rows, line_fit, rate, replicate_rows, run_fig1, run_table1, Fig1Config, LineFit,
    SolverSettings, Table1Config, FIG1_COLUMNS, TABLE1_COLUMNS,
};

pub const PARALLEL_ENV: &str = "SPARSE_SIR_PARALLEL";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: row {row}, column {column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sparse-sir",
    version,
    about = "Sparse sliced inverse regression via a Fantope-constrained convex program"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from one of the simulation settings.
    Simulate(SimulateArgs),
    /// Fit sparse SIR (or PFC) at fixed K and rho.
    Fit(FitArgs),
    /// Choose (K, rho) by M-fold cross-validation.
    Tune(TuneArgs),
    /// Replicate studies.
    #[command(subcommand)]
    Benchmark(BenchmarkCommand),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_setting)]
    pub setting: Setting,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; the ground truth goes next to it as `<stem>.truth.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct SolverArgs {
    #[arg(long, default_value_t = DEFAULT_NU)]
    pub nu: f64,
    #[arg(long = "eps", default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iter: u64,
}

impl SolverArgs {
    fn settings(&self) -> SolverSettings {
        SolverSettings {
            nu: self.nu,
            epsilon: self.epsilon,
            max_iter: self.max_iter as usize,
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct EstimatorArgs {
    /// Conditional covariance estimator: `diff` or `slice:H`.
    #[arg(long, default_value = "slice:5")]
    pub method: ConditionalMethod,
    /// Use principal fitted components with this basis (`poly:R` or `slice:H`) instead of SIR.
    #[arg(long)]
    pub pfc_basis: Option<BasisSpec>,
}

impl EstimatorArgs {
    fn estimator(&self) -> Estimator {
        match self.pfc_basis {
            Some(b) => Estimator::Pfc(b),
            None => Estimator::Sir(self.method),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with header `y,x1,...,xd`.
    pub data: PathBuf,
    /// Sparsity penalty; defaults to 2·sqrt(log d / n).
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, default_value_t = DEFAULT_SUPPORT_THRESHOLD)]
    pub support_threshold: f64,
    /// Write the full estimate as a binary dump (u64 d, then d*d f64 row-major, little-endian).
    #[arg(long)]
    pub dump_pi: Option<PathBuf>,
    /// JSON destination; stdout by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub k_grid: Vec<usize>,
    /// Explicit rho values; defaults to a log-spaced grid over [0.01, 4]·sqrt(log d / n).
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub grid_size: usize,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    /// Seed of the fold permutation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BenchmarkCommand {
    /// CV-tuned support recovery and score correlation.
    Table1(Table1Args),
    /// Subspace distance against sqrt(log d / n) at rho = 2·sqrt(log d / n).
    Fig1(Fig1Args),
}

#[derive(Debug, Args)]
pub struct CommonBenchArgs {
    #[arg(long, value_parser = parse_setting, default_value = "1")]
    pub setting: Setting,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Replicate r uses data seed `seed + r`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "slice:5")]
    pub method: ConditionalMethod,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Worker threads for replicates.
    #[arg(long, env = PARALLEL_ENV, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[command(flatten)]
    pub common: CommonBenchArgs,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 150)]
    pub d: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub k_grid: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub rho_grid_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub rho_min_mult: f64,
    #[arg(long, default_value_t = 4.0)]
    pub rho_max_mult: f64,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
}

#[derive(Debug, Args)]
pub struct Fig1Args {
    #[command(flatten)]
    pub common: CommonBenchArgs,
    #[arg(long = "d", value_delimiter = ',', default_value = "100,200")]
    pub dims: Vec<usize>,
    #[arg(long = "n", value_delimiter = ',', default_value = "200,400,800,1600")]
    pub sample_sizes: Vec<usize>,
    #[arg(long, default_value_t = 2.0)]
    pub rho_mult: f64,
}

fn parse_setting(s: &str) -> Result<Setting, String> {
    let id: u8 = s.parse().map_err(|_| format!("expected 1, 2, or 3, got '{s}'"))?;
    Setting::try_from(id).map_err(|e| e.to_string())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Tune(a) => cmd_tune(&a),
        Command::Benchmark(BenchmarkCommand::Table1(a)) => cmd_table1(&a),
        Command::Benchmark(BenchmarkCommand::Fig1(a)) => cmd_fig1(&a),
    }
}

#[derive(Debug, Serialize)]
pub struct TruthJson {
    pub setting: Setting,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub k: usize,
    /// 1-based covariate indices.
    pub support: Vec<usize>,
    /// One entry per direction, each of length d.
    pub directions: Vec<Vec<f64>>,
}

fn columns(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let spec = SimSpec::new(a.setting, a.n, a.d, a.seed)?;
    let (data, truth) = generate(&spec)?;
    io::write_dataset(&a.out, &data)?;
    let sidecar = TruthJson {
        setting: a.setting,
        n: a.n,
        d: a.d,
        seed: a.seed,
        k: truth.k,
        support: truth.support.iter().map(|j| j + 1).collect(),
        directions: columns(&truth.directions),
    };
    io::write_json(&io::truth_path(&a.out), &sidecar)
}

#[derive(Debug, Serialize)]
pub struct FitJson {
    pub data: PathBuf,
    pub n: usize,
    pub d: usize,
    pub estimator: Estimator,
    pub k: usize,
    pub rho: f64,
    pub nu: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub support_threshold: f64,
    pub converged: bool,
    pub iterations: usize,
    pub final_step_norm: f64,
    pub objective: Option<f64>,
    /// 1-based covariate indices.
    pub support: Vec<usize>,
    pub pi_diagonal: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// Top-K eigenvectors of the estimate, one entry per direction.
    pub directions: Vec<Vec<f64>>,
}

pub fn cmd_fit(a: &FitArgs) -> Result<(), CliError> {
    let data = io::read_dataset(&a.data)?;
    let rho = a.rho.unwrap_or_else(|| 2.0 * rate(data.n(), data.d()));
    let k = a.k as usize;
    if k > data.d() {
        return Err(CliError::Usage(format!(
            "--k {k} exceeds the number of covariates {}",
            data.d()
        )));
    }
    let settings = a.solver.settings();
    let estimator = a.estimator.estimator();
    let cfg = settings.config(rho, k);
    let result = fit_with_threshold(&data, &cfg, estimator, a.support_threshold)?;
    if let Some(path) = &a.dump_pi {
        io::write_matrix_dump(path, &result.pi_hat)?;
    }
    let out = FitJson {
        data: a.data.clone(),
        n: data.n(),
        d: data.d(),
        estimator,
        k,
        rho,
        nu: cfg.nu,
        epsilon: cfg.epsilon,
        max_iter: cfg.max_iter,
        support_threshold: a.support_threshold,
        converged: result.report.converged,
        iterations: result.report.iterations,
        final_step_norm: result.report.final_step_norm,
        objective: result.report.objective_trace.last().copied(),
        support: result.support.iter().map(|j| j + 1).collect(),
        pi_diagonal: result.pi_hat.diagonal(),
        eigenvalues: result.eigenvalues.clone(),
        directions: columns(&result.directions),
    };
    io::emit_json(a.out.as_deref(), &out)
}

#[derive(Debug, Serialize)]
pub struct TuneJson {
    pub data: PathBuf,
    pub n: usize,
    pub d: usize,
    pub config: CvConfig,
    pub report: CvReport,
}

pub fn cmd_tune(a: &TuneArgs) -> Result<(), CliError> {
    let data = io::read_dataset(&a.data)?;
    let rho_grid = match &a.rho_grid {
        Some(g) => g.clone(),
        None => default_rho_grid(data.n(), data.d(), a.grid_size),
    };
    let config = CvConfig {
        k_grid: a.k_grid.clone(),
        rho_grid,
        folds: a.folds,
        seed: a.seed,
        estimator: a.estimator.estimator(),
        solver: a.solver.settings().config(0.0, 1),
    };
    let report = cross_validate(&data, &config)?;
    let out = TuneJson {
        data: a.data.clone(),
        n: data.n(),
        d: data.d(),
        config,
        report,
    };
    io::emit_json(a.out.as_deref(), &out)
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize, S: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    summary: S,
    outputs: Vec<PathBuf>,
    generated_unix_seconds: u64,
    runtime_seconds: f64,
}

fn write_manifest<C: Serialize, S: Serialize>(
    dir: &Path,
    command: &str,
    config: &C,
    summary: S,
    outputs: Vec<PathBuf>,
    started: Instant,
) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{command}_manifest.json"));
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        summary,
        outputs,
        generated_unix_seconds: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    io::write_json(&path, &manifest)?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn header<'a>(prefix: &[&'a str], columns: &[&'a str]) -> Vec<&'a str> {
    let mut h = prefix.to_vec();
    h.extend(["replicate", "seed", "status"]);
    h.extend(columns);
    h
}

impl Table1Args {
    pub fn config(&self) -> Table1Config {
        Table1Config {
            setting: self.common.setting,
            n: self.n,
            d: self.d,
            replicates: self.common.replicates,
            seed: self.common.seed,
            method: self.common.method,
            k_grid: self.k_grid.clone(),
            rho_grid_size: self.rho_grid_size,
            rho_min_mult: self.rho_min_mult,
            rho_max_mult: self.rho_max_mult,
            folds: self.folds,
            solver: self.common.solver.settings(),
            parallel: self.common.parallel,
        }
    }
}

pub fn cmd_table1(a: &Table1Args) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = a.config();
    ensure_dir(&a.common.out_dir)?;
    let table = run_table1(&cfg)?;
    let rows_path = a.common.out_dir.join("table1_replicates.csv");
    io::write_csv(&rows_path, &header(&[], &TABLE1_COLUMNS), &replicate_rows(&table, &[]))?;
    let aggregates = table.aggregate()?;
    let summary_path = a.common.out_dir.join("table1_summary.csv");
    io::write_csv(
        &summary_path,
        &["metric", "mean", "se", "count"],
        &aggregate_rows(&aggregates, &[]),
    )?;

    println!(
        "table1: setting {}, n = {}, d = {}, {} replicates ({} failed)",
        cfg.setting,
        cfg.n,
        cfg.d,
        table.rows.len(),
        table.failures()
    );
    for metric in ["tpr", "fpr", "corr"] {
        if let Some(agg) = aggregate_of(&aggregates, metric) {
            let se = agg
                .se
                .map(|s| format!("{:.1}", 100.0 * s))
                .unwrap_or_else(|| "-".into());
            println!("  {metric:>5}  {:6.1} ({se})  x100", 100.0 * agg.mean);
        }
    }
    let summary: Vec<(String, f64, Option<f64>)> =
        aggregates.iter().map(|g| (g.column.clone(), g.mean, g.se)).collect();
    write_manifest(
        &a.common.out_dir,
        "table1",
        &cfg,
        summary,
        vec![rows_path, summary_path],
        started,
    )?;
    Ok(())
}

impl Fig1Args {
    pub fn config(&self) -> Fig1Config {
        Fig1Config {
            setting: self.common.setting,
            dims: self.dims.clone(),
            sample_sizes: self.sample_sizes.clone(),
            replicates: self.common.replicates,
            seed: self.common.seed,
            method: self.common.method,
            rho_mult: self.rho_mult,
            solver: self.common.solver.settings(),
            parallel: self.common.parallel,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig1Summary {
    pub d: usize,
    pub n: usize,
    pub rate: f64,
    /// `s·√(log d / n)` with `s` the true support size.
    pub x: f64,
    pub mean_distance: f64,
    pub se: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig1Trend {
    pub d: usize,
    /// Mean distance regressed on `√(log d / n)`.
    pub fit: LineFit,
}

/// Aggregates per `(d, n)` cell and the per-`d` linear trend.
pub fn summarize_fig1(
    cfg: &Fig1Config,
    cells: &[bench::Fig1Cell],
) -> Result<(Vec<Fig1Summary>, Vec<Fig1Trend>), CliError> {
    let mut summary = Vec::new();
    for cell in cells {
        let agg = cell.table.aggregate()?;
        let dist = aggregate_of(&agg, "distance").expect("distance column");
        let s = crate::simulate::ground_truth(cfg.setting, cell.d).support.len();
        let r = rate(cell.n, cell.d);
        summary.push(Fig1Summary {
            d: cell.d,
            n: cell.n,
            rate: r,
            x: s as f64 * r,
            mean_distance: dist.mean,
            se: dist.se,
            count: dist.count,
        });
    }
    let mut trends = Vec::new();
    for &d in &cfg.dims {
        let pts: Vec<&Fig1Summary> = summary.iter().filter(|p| p.d == d).collect();
        if pts.len() >= 2 {
            let xs: Vec<f64> = pts.iter().map(|p| p.rate).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.mean_distance).collect();
            trends.push(Fig1Trend {
                d,
                fit: line_fit(&xs, &ys)?,
            });
        }
    }
    Ok((summary, trends))
}

pub fn cmd_fig1(a: &Fig1Args) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = a.config();
    ensure_dir(&a.common.out_dir)?;
    let cells = run_fig1(&cfg)?;
    let mut rows = Vec::new();
    for cell in &cells {
        rows.extend(replicate_rows(&cell.table, &[cell.d.to_string(), cell.n.to_string()]));
    }
    let rows_path = a.common.out_dir.join("fig1_replicates.csv");
    io::write_csv(&rows_path, &header(&["d", "n"], &FIG1_COLUMNS), &rows)?;

    let (summary, trends) = summarize_fig1(&cfg, &cells)?;
    let summary_rows: Vec<Vec<String>> = summary
        .iter()
        .map(|p| {
            vec![
                p.d.to_string(),
                p.n.to_string(),
                io::format_value(p.rate),
                io::format_value(p.x),
                io::format_value(p.mean_distance),
                p.se.map(io::format_value).unwrap_or_default(),
                p.count.to_string(),
            ]
        })
        .collect();
    let summary_path = a.common.out_dir.join("fig1_summary.csv");
    io::write_csv(
        &summary_path,
        &["d", "n", "rate", "x", "mean_distance", "se", "count"],
        &summary_rows,
    )?;

    println!("fig1: setting {}, rho = {}·sqrt(log d / n)", cfg.setting, cfg.rho_mult);
    for p in &summary {
        let se = p.se.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "  d = {:4}  n = {:5}  x = {:.4}  distance = {:.4} ({se})",
            p.d, p.n, p.x, p.mean_distance
        );
    }
    for t in &trends {
        println!(
            "  d = {:4}  slope = {:.4}  intercept = {:.4}  R^2 = {:.4}",
            t.d, t.fit.slope, t.fit.intercept, t.fit.r_squared
        );
    }
    write_manifest(
        &a.common.out_dir,
        "fig1",
        &cfg,
        (&summary, &trends),
        vec![rows_path, summary_path],
        started,
    )?;
    Ok(())
}

/// Orthonormal basis of the true directions, shared by tests and benchmarks.
pub fn truth_basis(setting: Setting, d: usize) -> Result<nalgebra::DMatrix<f64>, Error> {
    orthonormal_columns(&crate::simulate::ground_truth(setting, d).directions)
}
