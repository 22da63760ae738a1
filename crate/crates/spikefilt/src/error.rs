//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A state or input contained NaN/inf where finite values are required.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// An estimate or membrane potential left the numerically meaningful
    /// range (norm above [`crate::DIVERGENCE_NORM`] or non-finite).
    #[error("divergence at step {step}: state norm {norm:.3e}")]
    Divergence { step: usize, norm: f64 },

    /// A matrix that must be invertible was singular.
    #[error("singular matrix: {0}")]
    SingularMatrix(&'static str),

    /// A mathematical precondition on an input value was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// Bad scenario configuration (dimensions, ranges, missing sections).
    #[error("configuration error: {0}")]
    Config(String),

    /// Config file could not be parsed; carries the file path and the
    /// parser's line/column diagnostics.
    #[error("config parse error in {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Rewrite the step index on divergence errors; run loops use this to
    /// attach the trajectory step at which a step-level routine failed.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::Divergence { norm, .. } => Error::Divergence { step, norm },
            other => other,
        }
    }

    /// True for divergence errors, which Monte-Carlo aggregation treats as
    /// per-run data loss rather than a fatal condition.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
