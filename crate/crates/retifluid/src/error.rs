use std::path::Path;

use thiserror::Error;

/// Failure of a command; [`CliError::exit_code`] maps it to the process
/// status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] retifluid_core::Error),
    #[error("{0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 validation (including malformed input files), 2 numerical failure,
    /// 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Format(_) => 1,
            CliError::Core(retifluid_core::Error::NonFinite(_)) => 2,
            CliError::Core(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io {
                path: "csv output".into(),
                source,
            },
            other => CliError::Format(format!("csv: {other:?}")),
        }
    }
}
