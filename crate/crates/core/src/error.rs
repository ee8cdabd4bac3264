use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular circuit: {0}")]
    Singular(String),

    /// Caller violated an operation's contract (wrong arity, step after done, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("threshold fit failed for relay {relay}: no sign change on [{lo}, {hi}]")]
    Fit { relay: u32, lo: f64, hi: f64 },

    #[error("model file error: {0}")]
    Model(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("decode error at offset {offset}: {msg}")]
    Decode { offset: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}
