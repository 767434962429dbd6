use std::io;

use thiserror::Error;

use crate::model::Prefix6;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid record: {0}")]
    Invalid(String),

    #[error("cannot split {0}: already a host prefix")]
    CannotSplit(Prefix6),

    #[error("need at least {needed} bits, got {got}")]
    TooFewBits { needed: usize, got: usize },

    #[error("address {addr} lies outside {prefix}")]
    OutsidePrefix { addr: String, prefix: Prefix6 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("truncated capture after {parsed} packets: {reason}")]
    TruncatedCapture { parsed: usize, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
