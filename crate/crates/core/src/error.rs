use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can surface, grouped by the stage that raises it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileMissing(PathBuf),
    #[error("size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(PathBuf),
    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("output dimensions must be at least 1x1")]
    ZeroDimension,
    #[error("dataset needs at least 3 entries, got {0}")]
    TooFewEntries(usize),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("failed to write {path}: {reason}")]
    Write { path: PathBuf, reason: String },
    #[error("invalid image data: {0}")]
    InvalidData(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("spatial mismatch: {0}")]
    SpatialMismatch(String),
    #[error("max pooling needs even spatial dims, got {height}x{width}")]
    OddDimension { height: usize, width: usize },
    #[error("parameter has no gradient")]
    MissingGradient,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("entry {0} has no mask")]
    MissingMask(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("image is empty")]
    EmptyImage,
    #[error("watershed needs at least one marker")]
    NoMarkers,

    #[error("cannot aggregate an empty score list")]
    EmptyScores,

    #[error("missing images directory: {0}")]
    MissingImagesDir(PathBuf),
    #[error("a model checkpoint is required for method unet")]
    ModelRequired,
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
