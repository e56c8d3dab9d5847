use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the design pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid demonstration `{label}`: {reason}")]
    InvalidDemonstration { label: String, reason: String },

    #[error("alignment failed: {0}")]
    Alignment(String),

    #[error("H-GP fit failed at EM iteration {iteration}: {reason}")]
    Fit { iteration: usize, reason: String },

    #[error("kernel matrix is not positive definite even with jitter {jitter:e}")]
    SingularKernel { jitter: f64 },

    #[error("degenerate compliance profile: lambda_min == lambda_max == {0:e}")]
    DegenerateProfile(f64),

    #[error("stiffness {k} N/m outside the admissible range [{lo}, {hi}]")]
    OutOfRange { k: f64, lo: f64, hi: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("search failed: {0}")]
    Search(String),

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
