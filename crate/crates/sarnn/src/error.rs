use std::path::PathBuf;
use std::process::ExitCode;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path} already exists; pass --force to overwrite")]
    Exists { path: PathBuf },

    #[error(transparent)]
    Core(#[from] sarnn_core::Error),

    #[error("failed checks: {}", .0.join(", "))]
    CheckFailed(Vec<String>),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format { path: path.into(), message: message.to_string() }
    }

    /// 0 ok, 1 usage or configuration, 2 numerical divergence, 3 failed check.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Core(sarnn_core::Error::Divergence { .. })
            | Error::Core(sarnn_core::Error::Integration { .. })
            | Error::Core(sarnn_core::Error::AllDiverged(_)) => 2,
            Error::CheckFailed(_) => 3,
            _ => 1,
        }
    }
}

impl From<Error> for ExitCode {
    fn from(e: Error) -> Self {
        ExitCode::from(e.exit_code())
    }
}
