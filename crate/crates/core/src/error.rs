use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("position {position} exceeds max_positions {max}")]
    PositionOverflow { position: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("token {0} is a special token and has no byte form")]
    SpecialToken(u32),

    #[error("{path}: line {line}: {message}")]
    Corpus {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: samples exceed the position budget on lines {lines:?}")]
    Oversized { path: PathBuf, lines: Vec<usize> },

    #[error("{0}: corpus is empty")]
    EmptyCorpus(String),

    #[error("invalid tree template: {0}")]
    Template(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("non-finite loss during gradient check")]
    NonFiniteLoss,

    #[error("no decode forwards recorded")]
    NoForwards,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}
