use thiserror::Error;

use crate::fitting::lbfgs::TraceRow;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the domain of an operation (non-finite input, log of
    /// a non-positive number, voltage out of range, bad index).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An object was used before it was ready, e.g. an unfitted normalizer.
    #[error("invalid state: {0}")]
    State(String),

    /// Missing or inconsistent inputs (files, sweeps, reports).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("insufficient samples: {0}")]
    Size(String),

    /// The objective became non-finite and no finite step could be found.
    #[error("optimizer diverged after {} iterations: {reason}", trace.len())]
    Diverged { reason: String, trace: Vec<TraceRow> },

    #[error("training failed: {0}")]
    Training(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerics rather than by bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::Training(_))
    }
}
