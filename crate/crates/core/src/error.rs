use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A value fell outside the domain where an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Scores and other 1/σ quantities are undefined at the noise-free endpoint.
    #[error("operation is singular at t = 0 (sigma = 0)")]
    SingularTime,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used by front-ends to pick exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Manifest { .. } | Error::Argument(_) => ErrorCategory::Config,
            Error::Io { .. }
            | Error::Wav { .. }
            | Error::Json { .. }
            | Error::UnsupportedAudio(_)
            | Error::DegenerateInput(_) => ErrorCategory::Data,
            Error::Domain(_)
            | Error::Dimension { .. }
            | Error::SingularTime
            | Error::UndefinedMetric(_) => ErrorCategory::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}
