use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image of {h}x{w} pixels is not divisible into {d}x{d} patches")]
    DimensionMismatch { h: usize, w: usize, d: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate embedding: row {row} has norm {norm:e}")]
    DegenerateEmbedding { row: usize, norm: f64 },

    #[error("cannot select from an empty score vector")]
    EmptyScores,

    #[error("probabilities at pixel {pixel} sum to {sum}, expected 1")]
    NotNormalized { pixel: usize, sum: f64 },

    #[error("labels file {path}:{line}: {msg}")]
    MalformedLabels {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("images referenced by the labels file are missing: {}", .0.join(", "))]
    MissingImages(Vec<String>),

    #[error("training diverged at epoch {}, batch {}: {}", .0.epoch, .0.batch, .0.reason)]
    Divergence(Box<crate::train::DivergenceSnapshot>),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
