use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MogError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MogError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite value in `{tensor}`: {detail}")]
    NumericalAbort { tensor: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
}

impl MogError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MogError::InvalidArgument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        MogError::State(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MogError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            MogError::Config(_) | MogError::InvalidArgument(_) => 2,
            MogError::NumericalAbort { .. } => 3,
            MogError::Io { .. } | MogError::Format { .. } => 4,
            MogError::State(_) => 2,
        }
    }
}
