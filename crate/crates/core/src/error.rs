use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("eigensolver failed to converge (dim {dim}, frobenius norm {frobenius:.3e}, max entry {max_abs:.3e})")]
    EigenFailure { dim: usize, frobenius: f64, max_abs: f64 },

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eigenvalue:.3e} (max {max_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64, max_eigenvalue: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid slicing: {0}")]
    InvalidSlicing(String),

    #[error("collinear basis: gram matrix condition number {condition:.3e} exceeds {limit:.0e}")]
    CollinearBasis { condition: f64, limit: f64 },

    #[error("invalid rank: {0}")]
    InvalidRank(String),

    #[error("solver diverged at iteration {iteration}: non-finite iterate")]
    Diverged { iteration: usize },

    #[error("invalid fold layout: {0}")]
    InvalidFold(String),

    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("aggregate invalid: {failed} of {total} replicates failed")]
    AggregateInvalid { failed: usize, total: usize },
}

impl Error {
    /// True for failures of the numerical routines themselves, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigenFailure { .. }
                | Error::NotPsd { .. }
                | Error::NotPositiveDefinite
                | Error::Diverged { .. }
                | Error::CollinearBasis { .. }
                | Error::AggregateInvalid { .. }
        )
    }
}
