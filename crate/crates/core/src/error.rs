use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("linear solver failed after {iterations} iterations (relative residual {residual:.3e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("volume constraint infeasible: target {target}, reachable range [{low:.4}, {high:.4}]")]
    InfeasibleVolume { target: f64, low: f64, high: f64 },

    #[error("invalid baseline compliance {0}")]
    InvalidBaseline(f64),

    #[error("split '{0}' is empty after filtering")]
    EmptySplit(String),

    #[error("training diverged at step {step} (loss {loss})")]
    TrainingFailure { step: usize, loss: f64 },

    #[error("parse error in {path} at offset {offset}: {message}")]
    Parse {
        path: String,
        offset: usize,
        message: String,
    },

    #[error("validation failed for record '{record}': {message}")]
    Validation { record: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
