use std::path::PathBuf;

use thiserror::Error;

use crate::imagecore::ColorSpace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("empty image")]
    EmptyImage,

    #[error("failed to decode image: {0}")]
    Decode(String),

    #[error("failed to encode image: {0}")]
    Encode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("unsupported conversion from {from} to {to}")]
    UnsupportedConversion { from: ColorSpace, to: ColorSpace },

    #[error("color-space mismatch: model is {model}, image is {image}")]
    ColorSpaceMismatch { model: ColorSpace, image: ColorSpace },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty sample list")]
    EmptySamples,

    #[error("empty mask")]
    EmptyMask,

    #[error("no plate found")]
    NoPlateFound,

    #[error("no food items")]
    NoFoodItems,

    #[error("malformed dataset: {0}")]
    Dataset(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid plate description: {0}")]
    PlateSpec(String),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch { expected: expected.to_string(), actual: actual.to_string() }
    }
}
