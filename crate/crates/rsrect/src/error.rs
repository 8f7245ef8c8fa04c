use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything the file layer and the commands can fail with. Each variant
/// maps to a distinct process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),

    #[error("input image {} is {height}x{width}; pass --crop to center-crop it to a square", path.display())]
    NotSquare {
        path: PathBuf,
        height: usize,
        width: usize,
    },

    #[error("checkpoint {} was trained for r={expected}, input is {found}x{found}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{}: file not found", .0.display())]
    MissingPath(PathBuf),

    #[error("{}:{line}: malformed manifest record: {reason}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{0} gradient check(s) failed")]
    GradCheck(usize),

    #[error(transparent)]
    Core(#[from] rsrect_core::Error),
}

impl Error {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::NotSquare { .. } => 2,
            Error::SizeMismatch { .. } => 3,
            Error::MissingPath(_) => 4,
            Error::Manifest { .. } | Error::Format { .. } => 5,
            Error::Io { .. } => 6,
            Error::Core(_) => 7,
            Error::GradCheck(_) => 8,
        }
    }

    pub(crate) fn format(path: &Path, reason: impl ToString) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }

    /// Wraps an IO error, turning "not found" into [`Error::MissingPath`].
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            Error::MissingPath(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}
