use thiserror::Error;

use crate::model::SessionId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid session ({i}, {j}): {reason}")]
    InvalidSession { i: usize, j: usize, reason: &'static str },

    #[error("duplicate session {0}")]
    DuplicateSession(SessionId),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected} components, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("negative rate {rate} for session index {session}")]
    NegativeRate { session: usize, rate: f64 },

    #[error("empty feasible rate region for {session}: minimum {min} exceeds maximum {max}")]
    EmptyRateRegion { session: SessionId, min: f64, max: f64 },

    #[error(
        "step size {step} for {target} outside (0, {bound}); pass the step-bound override to run anyway"
    )]
    StepSize { target: String, step: f64, bound: f64 },

    #[error("Slater condition fails{}: {}", epoch.map(|e| format!(" in epoch starting at slot {e}")).unwrap_or_default(), violations.join("; "))]
    Slater { epoch: Option<u64>, violations: Vec<String> },

    #[error("instance too large to enumerate: {0}")]
    EnumerationBound(String),

    #[error("dual solver did not converge in {iterations} iterations (last price change {last_change:e})")]
    NotConverged {
        iterations: u64,
        last_change: f64,
        last: Box<crate::numopt::NumSolution>,
    },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
