use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: u64, reason: String },

    #[error("truncated payload: expected {expected} records, input ends at record {record}")]
    Truncated { expected: u64, record: u64 },

    #[error("record {record}: label {label} is not below class count {num_classes}")]
    LabelOutOfRange {
        record: u64,
        label: u32,
        num_classes: u32,
    },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("spatial index requires at least one point")]
    EmptyIndex,

    #[error("k={k} out of range for index of {size} points")]
    KOutOfRange { k: usize, size: usize },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("cloud of {n} points is too small for the decimation schedule")]
    CloudTooSmall { n: usize },

    #[error("cloud has no ground-truth labels")]
    MissingLabels,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
