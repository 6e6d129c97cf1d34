//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by grid construction, file I/O, and the segmentation ops.
#[derive(Debug, Error)]
pub enum SpError {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("pixel ({row}, {col}) out of bounds for {height}x{width} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("conflicting scribbles at pixel ({row}, {col}): classes {class_a} and {class_b}")]
    ScribbleConflict {
        row: usize,
        col: usize,
        class_a: u8,
        class_b: u8,
    },

    #[error("superpixel {sp_id} intersects scribbles of classes {class_a} and {class_b}")]
    MultiClassSuperpixel { sp_id: usize, class_a: u8, class_b: u8 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("tensor format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("sample '{sample}' is missing tensor {path}")]
    MissingTensor { sample: String, path: PathBuf },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty log")]
    EmptyLog,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SpError>;
