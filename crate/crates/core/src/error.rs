use std::io;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants mirror the failure classes callers are expected to distinguish:
/// shape/domain problems in the numeric core, bad configuration, bad input
/// data, and statistically undefined evaluations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("parse error in thread {thread}: {message}")]
    Parse { thread: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(format!($($arg)*)))
    };
}

pub(crate) use bail;
