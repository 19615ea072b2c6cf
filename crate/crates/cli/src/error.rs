use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] kgfuse::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid override: {0}")]
    Override(String),
    #[error("{0}")]
    Usage(String),
    #[error("gradient check failed: {0}")]
    GradCheckFailed(String),
}

impl CliError {
    /// 0 success, 1 validation/config, 2 I/O, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use kgfuse::Error as E;
        match self {
            CliError::Io { .. } => 2,
            CliError::Override(_) | CliError::Usage(_) => 1,
            CliError::GradCheckFailed(_) => 3,
            CliError::Core(e) => match e {
                E::Io { .. } => 2,
                E::NonFinite(_) | E::Degenerate(_) | E::Determinism { .. } => 3,
                E::Dimension { .. }
                | E::Index { .. }
                | E::Parse { .. }
                | E::Validation(_)
                | E::Config(_)
                | E::Json(_) => 1,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
