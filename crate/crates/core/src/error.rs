use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("invalid reuse pattern: {0}")]
    InvalidPattern(String),

    #[error("layer {0} is computed by the digital softmax unit and cannot be mapped onto crossbars")]
    NotMappable(String),

    #[error("n_reuse mismatch: model has {actual} reusing encoders but {declared} were declared")]
    ReuseMismatch { declared: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("missing reuse source for encoder {0}")]
    MissingReuseSource(usize),

    #[error("failed to parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("tensor container: {0}")]
    Container(String),

    #[error("i/o error on {path}: {source}")]
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
}

pub type Result<T> = std::result::Result<T, Error>;
