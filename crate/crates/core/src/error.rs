use thiserror::Error;

/// Errors raised by model evaluation, criterion evaluation and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("information matrix is singular (lambda_min = {lambda_min:e}, threshold = {threshold:e})")]
    Singular { lambda_min: f64, threshold: f64 },

    #[error("smallest eigenvalue has multiplicity {0}; use the steepest-ascent direction")]
    Multiplicity(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, DesignError>;
