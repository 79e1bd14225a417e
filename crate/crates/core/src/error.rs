//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An image or dataset directory could not be read or decoded.
    #[error("ingest error for {path}: {message}")]
    Ingest { path: PathBuf, message: String },

    /// A configuration value violates a documented invariant.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An archive payload does not match what its manifest promises.
    #[error("corrupt archive file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("unsupported archive format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    /// The model is not in the state an operation requires.
    #[error("state error: {0}")]
    State(String),

    /// Wiring bug or broken internal invariant.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("expert {module}: {source}")]
    Module {
        module: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn ingest(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_module(self, module: usize) -> Self {
        Error::Module {
            module,
            source: Box::new(self),
        }
    }

    /// Process exit code: 2 for config/ingest problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Ingest { .. } | Error::Config(_) => 2,
            Error::Module { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
