//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A caller violated an operation precondition (bad label, non-scalar
    /// loss, undefined variance, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed checkpoint file.
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// Dataset loading / layout problem.
    #[error("data error: {0}")]
    Data(String),

    /// Several itemized dataset errors (one per offending file).
    #[error("dataset load failed:\n{}", .0.join("\n"))]
    DataList(Vec<String>),

    /// A split could not be produced (e.g. class too small to stratify).
    #[error("split error: {0}")]
    Split(String),

    /// Optimizer refused to step (e.g. non-finite gradient).
    #[error("optimizer error: {0}")]
    Optim(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
