use thiserror::Error;

/// Errors raised by mesh construction, assembly, preconditioning and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid inclusion layout: {0}")]
    Layout(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("solver breakdown at iteration {iteration}: {reason}")]
    Breakdown { iteration: usize, reason: String },

    #[error("no convergence after {iterations} iterations (norm ratio {ratio:e})")]
    MaxIterations { iterations: usize, ratio: f64 },

    #[error("instance too large for dense mode: dimension {dim} exceeds {limit}")]
    TooLarge { dim: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
