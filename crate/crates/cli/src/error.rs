use std::path::PathBuf;

use grsf_dtr_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}, row {row}: {message}")]
    Row { path: PathBuf, row: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for invalid input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Config { .. } | CliError::Row { .. } => 2,
            CliError::Core(e) => match e {
                CoreError::InvalidConfig(_)
                | CoreError::InvalidCutpoint { .. }
                | CoreError::InvalidRecord { .. }
                | CoreError::DimensionMismatch { .. }
                | CoreError::UnknownAction { .. }
                | CoreError::InvalidHorizon(_)
                | CoreError::InvalidWeight
                | CoreError::NonPositiveVisitLength(_) => 2,
                _ => 3,
            },
            CliError::Io { .. } | CliError::Runtime(_) => 3,
        }
    }
}
