//! Command failures and their process exit codes.

use std::path::Path;

use perceptkd_core::Error as CoreError;

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Usage, configuration or input-consistency problems.
pub const EXIT_USAGE: i32 = 2;
/// Numeric divergence, including replays whose outputs differ.
pub const EXIT_DIVERGENCE: i32 = 3;
/// Files that cannot be read or written.
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("refusing to aggregate: {0}")]
    Consistency(String),

    #[error("replay produced different output: {0}")]
    Mismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Consistency(_) => EXIT_USAGE,
            CliError::Mismatch(_) => EXIT_DIVERGENCE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                CoreError::Divergence { .. } | CoreError::NonFinite(_) => EXIT_DIVERGENCE,
                CoreError::Io { .. } | CoreError::Checkpoint(_) => EXIT_IO,
                _ => EXIT_USAGE,
            },
        }
    }
}
