use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite value in {path} at row {row}")]
    NonFinite { path: PathBuf, row: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("covariance of class {label} is singular")]
    SingularCovariance { label: u32 },

    #[error("label {0} is not in the classifier head")]
    UnknownLabel(u32),

    #[error("label {0} is already in the classifier head")]
    DuplicateLabel(u32),

    #[error("at least two sessions are required, got {0}")]
    TooFewSessions(usize),

    #[error("no test rows to evaluate")]
    EmptyTestSet,

    #[error("class {label} has {available} training rows, {requested} shots requested")]
    InsufficientShots {
        label: u32,
        available: usize,
        requested: usize,
    },

    #[error("infeasible benchmark spec: {0}")]
    InfeasibleSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by bad user input (files, configs, flags) as
    /// opposed to failures while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::NonFinite { .. }
                | Error::DimensionMismatch { .. }
                | Error::InsufficientShots { .. }
                | Error::InfeasibleSpec(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
