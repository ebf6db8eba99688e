//! Seeded generators for the three benchmark regressions and a replicate runner.
//!
//! Covariates are `N(0, Σ)` with `Σ_ij = φ^{|i−j|}`, drawn as `L z` where `L`
//! is the Cholesky factor of `Σ` and `z` is standard normal. Each dataset owns a
//! `ChaCha20Rng` seeded with `seed_from_u64(seed)`; it draws `z` row by row
//! (`n·d` values) and then the `n` noise terms, all through `rand_distr`'s
//! ziggurat `StandardNormal`. Replicate `r` (1-based) of a run with base seed
//! `s` uses seed `s + r`, so results never depend on scheduling.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, SymMatrix};

pub const AR1_PHI: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Setting {
    /// `y = (x1 + x2 + x3)/√3 + 2ε`
    Linear,
    /// `y = 1 + exp{(x1 + x2 + x3)/√3} + ε`
    Exponential,
    /// `y = (x1 + x2 + x3) / {0.5 + (x4 + x5 + 1.5)²} + 0.1ε`
    Rational,
}

impl Setting {
    pub fn id(self) -> u8 {
        match self {
            Setting::Linear => 1,
            Setting::Exponential => 2,
            Setting::Rational => 3,
        }
    }

    pub fn min_dim(self) -> usize {
        match self {
            Setting::Linear | Setting::Exponential => 3,
            Setting::Rational => 5,
        }
    }

    pub fn true_k(self) -> usize {
        match self {
            Setting::Linear | Setting::Exponential => 1,
            Setting::Rational => 2,
        }
    }

    fn response(self, x: &[f64], eps: f64) -> f64 {
        let s3 = x[0] + x[1] + x[2];
        match self {
            Setting::Linear => s3 / 3f64.sqrt() + 2.0 * eps,
            Setting::Exponential => 1.0 + (s3 / 3f64.sqrt()).exp() + eps,
            Setting::Rational => {
                let q = x[3] + x[4] + 1.5;
                s3 / (0.5 + q * q) + 0.1 * eps
            }
        }
    }
}

impl TryFrom<u8> for Setting {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Setting::Linear),
            2 => Ok(Setting::Exponential),
            3 => Ok(Setting::Rational),
            other => Err(Error::InvalidParameter(format!(
                "setting must be 1, 2 or 3, got {other}"
            ))),
        }
    }
}

impl From<Setting> for u8 {
    fn from(s: Setting) -> u8 {
        s.id()
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSpec {
    pub setting: Setting,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

impl SimSpec {
    pub fn new(setting: Setting, n: usize, d: usize, seed: u64) -> Result<Self> {
        let spec = Self { setting, n, d, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < self.setting.min_dim() {
            return Err(Error::InvalidParameter(format!(
                "setting {} needs d >= {}, got {}",
                self.setting,
                self.setting.min_dim(),
                self.d
            )));
        }
        if self.n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: self.n });
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `d x K`, unnormalized indicator directions.
    pub directions: DMatrix<f64>,
    /// Zero-based indices of the active covariates.
    pub support: Vec<usize>,
    pub k: usize,
}

pub fn ground_truth(setting: Setting, d: usize) -> GroundTruth {
    match setting {
        Setting::Linear | Setting::Exponential => GroundTruth {
            directions: DMatrix::from_fn(d, 1, |i, _| if i < 3 { 1.0 } else { 0.0 }),
            support: vec![0, 1, 2],
            k: 1,
        },
        Setting::Rational => GroundTruth {
            directions: DMatrix::from_fn(d, 2, |i, k| match (i, k) {
                (0..=2, 0) | (3..=4, 1) => 1.0,
                _ => 0.0,
            }),
            support: vec![0, 1, 2, 3, 4],
            k: 2,
        },
    }
}

/// `Σ_ij = φ^{|i−j|}`.
pub fn ar1_sigma(d: usize, phi: f64) -> Result<SymMatrix> {
    if phi.is_nan() || phi.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!("need |phi| < 1, got {phi}")));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    SymMatrix::from_fn(d, |i, j| phi.powi(i.abs_diff(j) as i32))
}

pub fn generate(spec: &SimSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    let chol = cholesky(&ar1_sigma(d, AR1_PHI)?)?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        x.row_mut(i).copy_from(&(&chol * z).transpose());
    }
    let y = (0..n)
        .map(|i| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            spec.setting.response(&row, eps)
        })
        .collect();
    Ok((Dataset::new(y, x)?, ground_truth(spec.setting, d)))
}

pub fn replicate_seed(base: u64, replicate: usize) -> u64 {
    base.wrapping_add(replicate as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    /// 1-based.
    pub replicate: usize,
    pub seed: u64,
    pub outcome: std::result::Result<Vec<f64>, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub column: String,
    pub mean: f64,
    /// Standard error of the mean; absent with fewer than two successful replicates.
    pub se: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateTable {
    pub columns: Vec<String>,
    pub rows: Vec<ReplicateRow>,
}

impl ReplicateTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// Per-column mean and standard error over successful replicates.
    ///
    /// Fails once at least 20% of replicates have failed.
    pub fn aggregate(&self) -> Result<Vec<Aggregate>> {
        let total = self.rows.len();
        let failed = self.failures();
        if total == 0 || failed * 5 >= total {
            return Err(Error::AggregateInvalid { failed, total });
        }
        let ok: Vec<&Vec<f64>> = self.rows.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        Ok(self
            .columns
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let vals: Vec<f64> = ok.iter().map(|v| v[c]).collect();
                let (mean, se) = mean_and_se(&vals);
                Aggregate {
                    column: name.clone(),
                    mean,
                    se,
                    count: vals.len(),
                }
            })
            .collect())
    }
}

pub fn mean_and_se(values: &[f64]) -> (f64, Option<f64>) {
    let m = values.len();
    let mean = values.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, Some((var / m as f64).sqrt()))
}

/// Runs `pipeline` on `replicates` datasets drawn from `template` with seeds
/// `template.seed + 1 ..= template.seed + replicates`, using at most
/// `parallelism` worker threads. `pipeline` also receives the replicate's
/// seed. Rows come back in replicate order.
pub fn run_replicates<F>(
    template: &SimSpec,
    replicates: usize,
    columns: &[&str],
    parallelism: usize,
    pipeline: F,
) -> Result<ReplicateTable>
where
    F: Fn(&Dataset, &GroundTruth, u64) -> Result<Vec<f64>> + Sync,
{
    if replicates == 0 {
        return Err(Error::InvalidParameter("need at least one replicate".into()));
    }
    template.validate()?;
    let run_one = |r: usize| {
        let seed = replicate_seed(template.seed, r);
        let outcome = generate(&template.with_seed(seed))
            .and_then(|(data, truth)| pipeline(&data, &truth, seed))
            .and_then(|v| {
                if v.len() == columns.len() {
                    Ok(v)
                } else {
                    Err(Error::DimensionMismatch {
                        expected: format!("{} metrics", columns.len()),
                        found: format!("{} metrics", v.len()),
                    })
                }
            })
            .map_err(|e| e.to_string());
        ReplicateRow {
            replicate: r,
            seed,
            outcome,
        }
    };
    // Nested parallel work inside `pipeline` runs on the same bounded pool.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let rows: Vec<ReplicateRow> = pool.install(|| (1..=replicates).into_par_iter().map(run_one).collect());
    Ok(ReplicateTable {
        columns: columns.iter().map(|c| c.to_string()).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::sample_cov;
    use crate::linalg::sym_eigen;

    #[test]
    fn ar1_examples() {
        assert_eq!(ar1_sigma(1, 0.5).unwrap().to_row_major(), vec![1.0]);
        assert_eq!(
            ar1_sigma(3, 0.5).unwrap().to_row_major(),
            vec![1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0]
        );
        let s = ar1_sigma(50, 0.5).unwrap();
        assert!(cholesky(&s).is_ok());
        assert!(sym_eigen(&s).unwrap().min_value() > 0.0);
        assert!(ar1_sigma(3, 1.0).is_err());
        assert!(ar1_sigma(3, -1.5).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(SimSpec::new(Setting::Linear, 10, 2, 0).is_err());
        assert!(SimSpec::new(Setting::Rational, 10, 4, 0).is_err());
        assert!(SimSpec::new(Setting::Rational, 10, 5, 0).is_ok());
        assert!(Setting::try_from(4).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SimSpec::new(Setting::Exponential, 20, 6, 42).unwrap();
        let (a, _) = generate(&spec).unwrap();
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate(&spec.with_seed(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn truth_for_each_setting() {
        let t = ground_truth(Setting::Rational, 5);
        assert_eq!(t.k, 2);
        assert_eq!(t.support, vec![0, 1, 2, 3, 4]);
        assert_eq!(t.directions.column(0).as_slice(), &[1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(t.directions.column(1).as_slice(), &[0.0, 0.0, 0.0, 1.0, 1.0]);
        let t = ground_truth(Setting::Linear, 4);
        assert_eq!((t.k, t.support.clone()), (1, vec![0, 1, 2]));
    }

    #[test]
    fn linear_response_variance() {
        let (data, truth) = generate(&SimSpec::new(Setting::Linear, 100_000, 3, 7).unwrap()).unwrap();
        // var(y) = βᵀΣβ / 3 + 4 with β the indicator direction
        let sigma = ar1_sigma(3, AR1_PHI).unwrap();
        let b = truth.directions.column(0);
        let signal = (b.transpose() * sigma.as_matrix() * b)[(0, 0)] / 3.0;
        let expected = signal + 4.0;
        let y = data.y();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        assert!((var - expected).abs() <= 0.05 * expected, "var {var} vs {expected}");
    }

    #[test]
    fn covariate_marginals_near_unit() {
        let (data, _) = generate(&SimSpec::new(Setting::Linear, 10_000, 5, 3).unwrap()).unwrap();
        let s = sample_cov(data.x()).unwrap();
        // se of a sample variance of N(0,1) is about sqrt(2/n)
        let se = (2.0f64 / 10_000.0).sqrt();
        for j in 0..5 {
            assert!((s.get(j, j) - 1.0).abs() <= 3.0 * se, "column {j}: {}", s.get(j, j));
        }
    }

    #[test]
    fn replicate_runner_single_and_parallel() {
        let spec = SimSpec::new(Setting::Linear, 30, 4, 100).unwrap();
        let pipeline = |data: &Dataset, _: &GroundTruth, _: u64| Ok(vec![data.y()[0], data.x()[(0, 0)]]);
        let one = run_replicates(&spec, 1, &["y0", "x00"], 1, pipeline).unwrap();
        let agg = one.aggregate().unwrap();
        assert_eq!(agg[0].mean, one.rows[0].outcome.as_ref().unwrap()[0]);
        assert_eq!(agg[0].se, None);
        assert_eq!(one.rows[0].seed, 101);

        let serial = run_replicates(&spec, 6, &["y0", "x00"], 1, pipeline).unwrap();
        let parallel = run_replicates(&spec, 6, &["y0", "x00"], 3, pipeline).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(
            serial.rows.iter().map(|r| r.seed).collect::<Vec<_>>(),
            (101..=106).collect::<Vec<_>>()
        );
    }

    #[test]
    fn replicate_failures_are_recorded() {
        let spec = SimSpec::new(Setting::Linear, 10, 3, 0).unwrap();
        let table = run_replicates(&spec, 10, &["v"], 1, |_, _, _| Err(Error::Diverged { iteration: 3 })).unwrap();
        assert_eq!(table.failures(), 10);
        assert!(matches!(table.aggregate(), Err(Error::AggregateInvalid { .. })));

        let table = run_replicates(&spec, 10, &["v"], 1, |data, _, _| {
            if data.y()[0] > 10.0 {
                Err(Error::Diverged { iteration: 1 })
            } else {
                Ok(vec![1.0])
            }
        })
        .unwrap();
        let agg = table.aggregate().unwrap();
        assert_eq!(agg[0].mean, 1.0);
    }
}
