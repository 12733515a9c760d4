use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to load frame {frame}: {reason}")]
    Load { frame: usize, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("registration failed between frames {from} and {to}: {reason}")]
    Registration {
        from: usize,
        to: usize,
        reason: String,
    },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("window layout error: {0}")]
    Layout(String),

    #[error("backend contract violated: {0}")]
    Contract(String),

    #[error("backend failure: {0}")]
    Backend(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl Error {
    /// Process exit code for this error class: 2 configuration, 3
    /// registration, 4 backend, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Layout(_) => 2,
            Error::Registration { .. } | Error::Degenerate(_) => 3,
            Error::Backend(_) | Error::Contract(_) => 4,
            Error::Io { .. } | Error::Load { .. } | Error::Dimension(_) => 1,
        }
    }
}
