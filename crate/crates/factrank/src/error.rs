use std::io;
use std::path::{Path, PathBuf};

/// Errors raised by the file formats and commands.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] factrank_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    /// 1 for usage and configuration problems (including missing input
    /// files), 2 for invalid data, 3 for numeric or contract failures.
    pub fn exit_code(&self) -> i32 {
        use factrank_core::Error as C;
        match self {
            Error::Usage(_) => 1,
            Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 1,
            Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } => 2,
            Error::Core(C::Config(_)) => 1,
            Error::Core(C::Validation(_) | C::Lookup { .. }) => 2,
            Error::Core(C::Contract(_) | C::Dimension { .. }) => 3,
        }
    }
}
