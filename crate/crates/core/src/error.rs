use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch at layer `{layer}`: {msg}")]
    Shape { layer: String, msg: String },

    #[error("state error: {0}")]
    State(String),

    #[error("corrupt file {}: {msg}", path.display())]
    Corrupt { path: PathBuf, msg: String },

    #[error("incompatible architecture: file digest {found} does not match network digest {expected}")]
    IncompatibleArchitecture { expected: String, found: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn shape(layer: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Shape { layer: layer.into(), msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line tool: 1 for configuration
    /// problems, 2 for everything caused by the data being processed.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::IncompatibleArchitecture { .. } => 1,
            _ => 2,
        }
    }
}
