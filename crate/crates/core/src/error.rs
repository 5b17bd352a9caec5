use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("index {index} out of range 0..={max}")]
    Index { index: usize, max: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("malformed container header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("unsupported dtype {0:?} (only f32 is supported)")]
    Dtype(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("mask generation failed after {0} attempts")]
    DegenerateMask(usize),

    #[error("could not reach target prevalence after {0} attempts")]
    Prevalence(usize),

    #[error("checkpoint verification failed: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}; state: {state}")]
    NonFiniteLoss { step: usize, state: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parameter(_) | Error::Config(_) | Error::Index { .. } => ErrorKind::Config,
            Error::Shape { .. }
            | Error::Data(_)
            | Error::MalformedHeader { .. }
            | Error::Truncated { .. }
            | Error::Dtype(_)
            | Error::UndefinedMetric(_)
            | Error::Checkpoint(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::DegenerateMask(_)
            | Error::Prevalence(_)
            | Error::NonFiniteLoss { .. }
            | Error::Io { .. } => ErrorKind::Runtime,
        }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Parameter(msg()))
    }
}
