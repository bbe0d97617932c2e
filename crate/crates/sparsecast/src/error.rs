use std::path::{Path, PathBuf};

use sparsecast_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors of the file-format and command layer. Each maps to a process exit
/// code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}, line {line}: {reason}")]
    Config { path: PathBuf, line: usize, reason: String },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}, line {line}: {source}")]
    Row { path: PathBuf, line: usize, source: CoreError },

    #[error("missing {what} at {path}; run `sparsecast {command}` first")]
    MissingArtifact { what: &'static str, path: PathBuf, command: &'static str },

    #[error("{path} is locked by another run (remove the lock file if no run is active)")]
    Locked { path: PathBuf },
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl AsRef<Path>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.as_ref().to_path_buf(), reason: reason.into() }
    }

    /// 2 for configuration, 3 for data, 4 for training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Core(e) | Error::Row { source: e, .. } => match e {
                CoreError::Config { .. } | CoreError::Usage(_) => 2,
                CoreError::Compatibility(_) | CoreError::Resume { .. } | CoreError::Training(_) | CoreError::Store(_) => 4,
                _ => 3,
            },
            Error::Io { .. } | Error::Format { .. } | Error::MissingArtifact { .. } => 3,
            Error::Locked { .. } => 4,
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
