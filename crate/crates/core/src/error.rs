use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("exponent overflow: m*gamma/n = {ratio} must stay below 1/p_plus = {limit}")]
    ExponentOverflow { ratio: f64, limit: f64 },

    #[error("kernel truncation at scale {scale}: tail mass {tail:e} exceeds tolerance {tol:e}")]
    Truncation { scale: f64, tail: f64, tol: f64 },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("hypothesis violation: {0}")]
    Hypothesis(String),

    #[error("kernel bound violated at t = {t}, x = {x:?}, y = {y:?}: {detail}")]
    KernelBound {
        t: f64,
        x: Vec<f64>,
        y: Vec<f64>,
        detail: String,
    },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("tail error: {0}")]
    Tail(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
