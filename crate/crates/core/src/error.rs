//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("missingness indicator is not in {{0,1}} at row {row} (value {value})")]
    NonBinaryIndicator { row: usize, value: f64 },
    #[error("non-finite outcome value at observed row {row}, grid point {col}")]
    NonFiniteObservedOutcome { row: usize, col: usize },
    #[error("too few observed outcomes: {observed} observed but {covariates} covariates")]
    TooFewObserved { observed: usize, covariates: usize },
    #[error("non-finite covariate at row {row}, column {col}")]
    NonFiniteCovariate { row: usize, col: usize },
    #[error("observed-unit Gram matrix is numerically singular (condition number {cond:.3e})")]
    SingularDesign { cond: f64 },
    #[error("insufficient observed units: {observed} observed, {needed} needed")]
    InsufficientObserved { observed: usize, needed: usize },
    #[error("logistic likelihood appears separated (|gamma| = {norm:.3e} after {iterations} iterations)")]
    Separation { norm: f64, iterations: usize },
    #[error("all missingness indicators are identical; propensity model is degenerate")]
    AllSameIndicator,
    #[error("moment matrix Pi is numerically singular")]
    SingularPi,
    #[error("covariance diagonal vanishes at grid point {index}")]
    ZeroVarianceDiagonal { index: usize },
    #[error("confidence level alpha = {alpha} is outside (0,1)")]
    LevelOutOfRange { alpha: f64 },
    #[error("partition does not tile [0,1]: {0}")]
    BadPartition(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NonPsd { min_eig: f64 },
    #[error("replicate failure rate {failed}/{total} exceeds 1%")]
    FailureRateExceeded { failed: usize, total: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
