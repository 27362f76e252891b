//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape disagreement at a graph op; names the op that rejected it.
    #[error("shape error in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Malformed graph use (non-scalar loss, foreign node id, ...).
    #[error("structural error: {0}")]
    Structural(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Bad caller-supplied input (token ids, corpus, phase lists, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Out-of-range index (expert slot, cluster id, ...).
    #[error("index error: {0}")]
    Index(String),

    /// Parameter containers disagree structurally; names the divergent path.
    #[error("schema error: {0}")]
    Schema(String),

    /// Checkpoints cannot be assembled into a model (duplicate/missing slots).
    #[error("assembly error: {0}")]
    Assembly(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A non-finite value surfaced during training; carries the parameter
    /// path or the (phase, step, batch) coordinates of the abort.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Checkpoint or report file could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
