use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model, algorithm or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid runtime input (labels, empty tensors, ...).
    #[error("input error: {0}")]
    Input(String),

    #[error("numerical error in layer {layer} ({kind}): non-finite value")]
    Numerical { layer: usize, kind: &'static str },

    #[error("format error in {path} at byte {offset}: {msg}")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    /// Mismatch between participants of a federated round.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("client {client} failed: {source}")]
    Client {
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether this error stems from user configuration rather than execution.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Client { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
