use std::path::PathBuf;

use thiserror::Error;

use crate::score::Hand;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tempo: {0} bpm (must be positive and finite)")]
    InvalidTempo(f64),

    #[error("{0} hand part has no notes")]
    EmptyPart(Hand),

    #[error("empty input sequence")]
    EmptySequence,

    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("unsupported score layout: {0}")]
    UnsupportedLayout(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("level {level} outside [1, {k}]")]
    LevelOutOfRange { level: u32, k: u32 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("analysis error: {0}")]
    Analysis(String),
}

impl Error {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
