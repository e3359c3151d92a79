use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the core pipeline.
///
/// Every variant maps to a stable name via [`Error::name`]; host-language
/// bindings surface that name in their exception text.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset has no samples")]
    EmptyDataset,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("index {index} out of range for {len} samples")]
    Index { index: usize, len: usize },

    #[error("sample {index} failed its checksum")]
    CorruptSample { index: usize },

    #[error("image codec error: {0}")]
    Codec(String),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid augmentation stage: {0}")]
    InvalidStage(String),

    #[error("pipeline is empty")]
    EmptyPipeline,

    #[error("pipeline parse error on line {line}: {message}")]
    PipelineParse { line: usize, message: String },

    #[error("relation matrix has no positive pairs")]
    EmptyRelation,

    #[error("invalid relation matrix: {0}")]
    InvalidRelation(String),

    #[error("loss needs at least 2 rows, got {0}")]
    InsufficientBatch(usize),

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("no recorded forward pass to differentiate")]
    StaleTape,

    #[error("method expects {expected} views, batch has {actual}")]
    ViewCountMismatch { expected: usize, actual: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: u32, num_classes: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("loss became non-finite at step {step}")]
    NanLoss { step: u64 },
}

impl Error {
    /// Stable, language-neutral error name.
    pub fn name(&self) -> &'static str {
        match self {
            Error::EmptyDataset => "EmptyDataset",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::Io { .. } => "IoError",
            Error::Format(_) => "FormatError",
            Error::CorruptFile(_) => "CorruptFile",
            Error::Index { .. } => "IndexError",
            Error::CorruptSample { .. } => "CorruptSample",
            Error::Codec(_) => "CodecError",
            Error::Sample { source, .. } => source.name(),
            Error::InvalidStage(_) => "InvalidStage",
            Error::EmptyPipeline => "EmptyPipeline",
            Error::PipelineParse { .. } => "PipelineParse",
            Error::EmptyRelation => "EmptyRelation",
            Error::InvalidRelation(_) => "InvalidRelation",
            Error::InsufficientBatch(_) => "InsufficientBatch",
            Error::DegenerateEmbedding(_) => "DegenerateEmbedding",
            Error::InvalidParam(_) => "InvalidParam",
            Error::StaleTape => "StaleTape",
            Error::ViewCountMismatch { .. } => "ViewCountMismatch",
            Error::InvalidLabel { .. } => "InvalidLabel",
            Error::EmptyInput => "EmptyInput",
            Error::NanLoss { .. } => "NanLoss",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_sample(self, index: usize) -> Self {
        match self {
            e @ Error::Sample { .. } => e,
            other => Error::Sample {
                index,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
