//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]. Variants are grouped into
//! coarse [`ErrorCategory`] buckets so that front ends can map them onto
//! stable exit codes without matching every variant.

use std::path::PathBuf;

use thiserror::Error;

use crate::steering::StepClass;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("tensor shape must have at least one mode")]
    EmptyShape,

    #[error("invalid epsilon {0}: must lie in (0, 1]")]
    InvalidEpsilon(f64),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("rank mismatch: {0}")]
    RankMismatch(String),

    #[error("reference tensor has zero Frobenius norm")]
    ZeroReference,

    #[error("step index {got} does not follow previous step {prev}")]
    NonMonotonicStep { prev: u64, got: u64 },

    #[error("window holds {len} of {capacity} steps")]
    WindowNotFull { len: usize, capacity: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("routing mode requires a rank signal at step {step}")]
    MissingSignal { step: u64 },

    #[error("router already terminated; reset before routing further steps")]
    RouterTerminated,

    #[error("sample {sample} lacks a rank signal at step {step}")]
    MissingRankSignals { sample: String, step: u64 },

    #[error("no {0:?} steps available for steering extraction")]
    EmptyClass(StepClass),

    #[error("malformed tensor file at byte offset {offset}: {message}")]
    RgtFormat { offset: u64, message: String },

    #[error("malformed trace at line {line}: {message}")]
    TraceFormat { line: usize, message: String },

    #[error("unsupported trace schema version {0}")]
    SchemaVersionUnsupported(u64),

    #[error("invariant violation in field `{field}` at line {line}: {message}")]
    InvariantViolation {
        field: &'static str,
        line: usize,
        message: String,
    },

    #[error("generator spec error: {0}")]
    Spec(String),

    #[error("LRM trace exhausted: splice requested step {requested} of {available}")]
    TraceExhausted { requested: usize, available: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad input, configuration or file contents.
    User,
    /// An SVD failed to converge or input was not finite.
    Numerical,
    /// Filesystem failure.
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NumericalFailure(_) => ErrorCategory::Numerical,
            Error::Io { .. } => ErrorCategory::Io,
            _ => ErrorCategory::User,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
