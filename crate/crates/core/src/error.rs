use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the tracker, training and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("tracker is not initialized")]
    Uninitialized,

    #[error("training diverged at epoch {epoch}, iteration {iteration}: loss {loss} exceeds 10x initial {initial}")]
    Diverged {
        epoch: usize,
        iteration: usize,
        loss: f64,
        initial: f64,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("malformed ground truth in {path}, line {line}: {message}")]
    GroundTruth {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
