pub mod cli;
pub mod covariance;
pub mod error;
pub mod fantope;
pub mod linalg;
pub mod metrics;
pub mod sdr;
pub mod simulate;
pub mod solver;
