use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("missing {what}: {} does not exist", path.display())]
    MissingPath { what: &'static str, path: PathBuf },
    #[error(transparent)]
    Core(#[from] strokesel_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AppError>;

impl AppError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        AppError::Io {
            context: context.into(),
            source,
        }
    }

    /// 1 for anything the caller typed wrong, 2 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) | AppError::UnknownKey(_) | AppError::BadValue { .. } => 1,
            AppError::MissingPath { .. } | AppError::Core(_) | AppError::Io { .. } => 2,
        }
    }

    /// Short stable name printed ahead of the message.
    pub fn name(&self) -> &'static str {
        match self {
            AppError::Usage(_) => "UsageError",
            AppError::UnknownKey(_) => "UnknownKey",
            AppError::BadValue { .. } => "BadValue",
            AppError::MissingPath { what, .. } => match *what {
                "checkpoint" => "MissingCheckpoint",
                "dataset" => "MissingDataset",
                _ => "MissingPath",
            },
            AppError::Core(e) => core_name(e),
            AppError::Io { .. } => "IoError",
        }
    }
}

impl From<AppError> for ExitCode {
    fn from(e: AppError) -> Self {
        ExitCode::from(e.exit_code())
    }
}

fn core_name(e: &strokesel_core::Error) -> &'static str {
    use strokesel_core::Error as E;
    match e {
        E::MalformedDocument { .. } => "MalformedDocument",
        E::EmptySketch => "EmptySketch",
        E::OutOfCanvas { .. } => "OutOfCanvas",
        E::LengthMismatch { .. } => "LengthMismatch",
        E::EmptySubset => "EmptySubset",
        E::CorruptCheckpoint(_) => "CorruptCheckpoint",
        E::DatasetTooSmall(_) => "DatasetTooSmall",
        E::UnknownPairedId(_) => "UnknownPairedId",
        E::EmptyGallery => "EmptyGallery",
        E::EmptyEpisode => "EmptyEpisode",
        E::EmptyBatch => "EmptyBatch",
        E::TooManyStrokes { .. } => "TooManyStrokes",
        E::InvalidFractions(_) => "InvalidFractions",
        E::InvalidConfig(_) => "InvalidConfig",
        E::Tensor(_) => "TensorError",
        E::Io(_) => "IoError",
    }
}
