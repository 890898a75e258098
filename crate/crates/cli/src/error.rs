use std::path::PathBuf;

use envdiff_core::ErrorCategory;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] envdiff_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        let category = match self {
            CliError::Core(e) => e.category(),
            CliError::Config(_) | CliError::Toml { .. } => ErrorCategory::Config,
            CliError::Io { .. } | CliError::Data(_) => ErrorCategory::Data,
            CliError::Numeric(_) => ErrorCategory::Numeric,
        };
        match category {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numeric => 4,
        }
    }
}
