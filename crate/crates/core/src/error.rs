//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Structural problem with an input: wrong shape, inconsistent sizes.
    #[error("dimension mismatch in `{field}`: expected {expected}, got {got}")]
    Dimension {
        field: &'static str,
        expected: String,
        got: String,
    },

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A standing model assumption failed to hold.
    #[error("model validation failed: {0}")]
    Validation(String),

    /// ODE integration could not produce a trustworthy solution.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Multiplier calibration did not converge.
    #[error("calibration failure: {0}")]
    Calibration(String),

    /// Estimator inputs admit no meaningful estimate.
    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    /// Too few usable data points for a regression.
    #[error("insufficient signal: {0}")]
    InsufficientSignal(String),

    /// An operation mixed quantities from two different ensembles.
    #[error("ensemble mismatch: {0}")]
    EnsembleMismatch(String),

    /// A rate experiment was refused before running.
    #[error("experiment refused: {0}")]
    Refused(String),

    /// Configuration file problems.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
