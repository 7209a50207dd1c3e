use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration or user-supplied option.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical procedure failed (factorization, solver, non-finite values).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Cholesky factorization failed even after the maximum diagonal jitter.
    #[error("matrix is not positive definite after jitter {jitter:e}: min pivot {min_pivot:e}")]
    NotPositiveDefinite { min_pivot: f64, jitter: f64 },

    /// Bivariate Matérn hyperparameters violate the validity conditions.
    #[error(
        "invalid bivariate Matérn parameters: margin_a = {margin_a:e} (length-scale condition), \
         margin_rho = {margin_rho:e} (correlation bound)"
    )]
    ConstraintViolation { margin_a: f64, margin_rho: f64 },

    /// Every optimizer start failed.
    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
