use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid sensor pair ({0}, {0})")]
    InvalidPair(u8),

    #[error("band [{low}, {high}] Hz is outside [0, {nyquist}] Hz")]
    InvalidBand { low: f64, high: f64, nyquist: f64 },

    #[error("threshold window has {got} samples, expected {expected}")]
    InvalidWindow { expected: usize, got: usize },

    #[error("sample index {got} arrived after {last}")]
    OutOfOrder { last: u64, got: u64 },

    #[error("frame [{start}, {end}] is no longer in the history buffer (oldest index {oldest})")]
    Capacity { start: u64, end: u64, oldest: u64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by bad configuration or arguments rather
    /// than by the filesystem or network.
    pub fn is_config(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
