use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:e}, threshold {threshold:e})")]
    NotPsd { min_eigenvalue: f64, threshold: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("need at least 2 groups for the score covariance, got {0}")]
    TooFewGroups(usize),

    #[error(
        "optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})"
    )]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("need at least {needed} draws, got {got}")]
    EmptyDraws { needed: usize, got: usize },

    #[error("interval level must lie in (0, 1), got {0}")]
    BadLevel(f64),

    #[error("need at least 2 successful replications per cell, got {0}")]
    TooFewReps(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures that stem from the numerics rather than from the
    /// caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NotPsd { .. } | Error::NoConvergence { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
