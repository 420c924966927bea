use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A value that must stay inside a declared range did not.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Config(#[from] crate::config::ConfigError),

    #[error("protocol error: {0}")]
    Protocol(String),

    /// Training produced a non-finite factor.
    #[error("training diverged at epoch {epoch} ({what})")]
    Diverged { epoch: usize, what: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
