use thiserror::Error;

use crate::objective::ObjectiveBreakdown;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} is not symmetric positive definite")]
    Decomposition { what: String },

    #[error("numerical blowup at step {step}: {context}")]
    Blowup { step: usize, context: String },

    #[error("filter divergence: {0}")]
    FilterDivergence(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("degenerate ensemble of {0} members (need at least 2)")]
    DegenerateEnsemble(usize),

    #[error("transport map is singular: |det(I - KH)| = {0:e}")]
    SingularTransport(f64),

    #[error("objective is not finite at probe point for coordinate {0}")]
    NonFiniteProbe(usize),

    #[error("objective failed at step {step}: {source}")]
    ObjectiveFailed {
        step: usize,
        partial: Box<ObjectiveBreakdown>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidModel(_) | Error::Config(_) | Error::Dimension(_) => 2,
            Error::Unsupported(_) => 2,
            Error::Io(_) | Error::Csv(_) => 4,
            Error::Json(e) if e.is_io() => 4,
            Error::Json(_) => 2,
            Error::ObjectiveFailed { source, .. } => source.exit_code(),
            _ => 3,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
