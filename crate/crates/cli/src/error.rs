use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        #[source]
        source: matchdiag_core::Error,
    },

    #[error(transparent)]
    Core(#[from] matchdiag_core::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("replay differs from the recorded report: {0}")]
    ReplayMismatch(String),
}

impl CliError {
    pub fn input(path: &std::path::Path) -> impl FnOnce(matchdiag_core::Error) -> CliError + '_ {
        move |source| CliError::Input {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for anything the caller can fix, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        use matchdiag_core::Error as E;
        let core = match self {
            CliError::Input { source, .. } => source,
            CliError::Core(e) => e,
            CliError::Usage(_) | CliError::Io { .. } | CliError::Json(_) => return 2,
            CliError::ReplayMismatch(_) => return 3,
        };
        match core {
            E::DegenerateMetric | E::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
