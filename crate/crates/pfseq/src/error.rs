use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error taxonomy for the whole crate. The CLI maps each variant class to a
/// process exit code: usage/config -> 1, numeric failure -> 2, I/O -> 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// NaN/Inf detected at an operation boundary. Training aborts loudly
    /// instead of propagating garbage.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The gradient-check oracle observed a non-deterministic loss function;
    /// central differences would be meaningless.
    #[error("gradient-check oracle invalid: {0}")]
    OracleInvalid(String),

    #[error("checkpoint has bad magic (expected \"PFCK\")")]
    CkptBadMagic,

    #[error("checkpoint version {0} unsupported (expected 1)")]
    CkptVersion(u32),

    #[error("checkpoint truncated while reading `{0}`")]
    CkptTruncated(String),

    #[error("corpus file {path}: {msg}")]
    CorpusFormat { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit code the CLI uses for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Config(_) => 1,
            Error::Numeric(_) | Error::OracleInvalid(_) => 2,
            Error::CkptBadMagic
            | Error::CkptVersion(_)
            | Error::CkptTruncated(_)
            | Error::CorpusFormat { .. }
            | Error::Io { .. } => 3,
        }
    }
}
