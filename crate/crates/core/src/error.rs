use strokesel_tape::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed sketch document at line {line}: {reason}")]
    MalformedDocument { line: usize, reason: String },
    #[error("sketch has no strokes")]
    EmptySketch,
    #[error("stroke {stroke} point {point} lies outside the {w}x{h} canvas")]
    OutOfCanvas {
        stroke: usize,
        point: usize,
        h: usize,
        w: usize,
    },
    #[error("mask length {mask} does not match stroke count {strokes}")]
    LengthMismatch { mask: usize, strokes: usize },
    #[error("mask selects no strokes")]
    EmptySubset,
    #[error("checkpoint is corrupt: {0}")]
    CorruptCheckpoint(String),
    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),
    #[error("paired id {0:?} is not in the gallery")]
    UnknownPairedId(String),
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("episode has no steps")]
    EmptyEpisode,
    #[error("PPO batch is empty")]
    EmptyBatch,
    #[error("sketch has {k} strokes, more than the exhaustive cap of {cap}")]
    TooManyStrokes { k: usize, cap: usize },
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    InvalidFractions(Vec<f64>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
