use std::path::{Path, PathBuf};

use thiserror::Error;

/// Decoding failure inside a binary container.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{msg} at byte offset {offset}")]
pub struct FormatError {
    pub offset: usize,
    pub msg: String,
}

impl FormatError {
    pub fn new(offset: usize, msg: impl Into<String>) -> Self {
        FormatError {
            offset,
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
    #[error("{}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Core(#[from] swr_core::Error),
    #[error("{} already exists (refusing to overwrite)", .0.display())]
    Exists(PathBuf),
    #[error("verification failed: {0}")]
    Verification(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, msg: impl ToString) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }

    /// Process exit code: 2 for verification failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Verification(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
