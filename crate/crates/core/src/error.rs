use thiserror::Error;

/// Errors produced anywhere in the pulse-optimization stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("cannot compose operators: {0}")]
    Composition(String),

    #[error("integration failed at t = {last_good_time:e} s: {reason}")]
    Integration { last_good_time: f64, reason: String },

    #[error("steady state not reached: {0}")]
    Convergence(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate compensation direction: <v,v> = {0:e}")]
    DegenerateDirection(f64),

    #[error("non-finite utility during line search at iteration {iteration}")]
    NonFiniteUtility { iteration: usize },

    #[error("gradient check failed: relative error {relative_error:e} exceeds {tolerance:e}")]
    GradientCheck { relative_error: f64, tolerance: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn dimension(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
