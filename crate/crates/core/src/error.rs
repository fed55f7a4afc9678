use std::io;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two components were wired together with incompatible settings.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A configuration key failed validation.
    #[error("config key `{key}`: {msg}")]
    ConfigKey { key: String, msg: String },

    /// The caller broke a stateful contract, e.g. stepping a finished episode.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn key(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::ConfigKey { key: key.into(), msg: msg.into() }
    }
}
