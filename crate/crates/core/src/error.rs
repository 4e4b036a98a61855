use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value at node {node} ({op}): {detail}")]
    Numeric {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGrad(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("load error ({path}): {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}

macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::error::Error::Contract(format!($($arg)*)) };
}

pub(crate) use {config_err, contract_err, dim_err};
