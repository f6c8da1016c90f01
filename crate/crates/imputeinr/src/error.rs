//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by data loading, model construction, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// A CSV row could not be parsed (wrong field count or bad number).
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    /// The input contained zero variables or zero timestamps.
    #[error("empty data: {0}")]
    EmptyData(String),

    /// Requested window length exceeds the series length.
    #[error("window {window} larger than series length {series_len}")]
    WindowTooLarge { window: usize, series_len: usize },

    /// Two grids or weight tensors disagree on shape.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The time axis is not divisible into patches of the configured length.
    #[error("patch length {patch_len} does not divide series length {len}")]
    Patch { patch_len: usize, len: usize },

    /// A loss was requested over an empty scoring set.
    #[error("masked loss undefined: no positions to score")]
    EmptyMaskSet,

    /// A non-finite value appeared in activations, loss, or gradients.
    #[error("non-finite value encountered: {0}")]
    Numerics(String),

    /// A checkpoint file is malformed or has an incompatible version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Configuration values are inconsistent or out of range.
    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
