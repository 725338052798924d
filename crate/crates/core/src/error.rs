use std::io;

use crate::fusion::GenerationTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("transport error (backend {backend}): {message}")]
    Transport { backend: String, message: String },

    #[error("handshake failed: {0}")]
    Handshake(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("generation failed after {} spans: {source}", partial.spans.len())]
    Generation {
        source: Box<Error>,
        partial: Box<GenerationTrace>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn transport(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Transport {
            backend: backend.into(),
            message: message.into(),
        }
    }
}
