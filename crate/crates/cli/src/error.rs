use std::path::PathBuf;

use rankguide_core::ErrorCategory;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] rankguide_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for user/config/format errors, 3 numerical, 4 IO.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Core(e) => match e.category() {
                ErrorCategory::User => 2,
                ErrorCategory::Numerical => 3,
                ErrorCategory::Io => 4,
            },
            Self::Usage(_) => 2,
            Self::Io { .. } => 4,
        }
    }
}
