use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic {found:?} at byte offset {offset}, expected {expected:?}")]
    BadMagic {
        expected: [u8; 4],
        found: [u8; 4],
        offset: u64,
    },

    #[error("truncated file: needed {needed} bytes at offset {offset}, {available} available")]
    TruncatedFile { offset: u64, needed: u64, available: u64 },

    #[error("unsupported {what} {value} at byte offset {offset}")]
    Unsupported {
        what: &'static str,
        value: u64,
        offset: u64,
    },

    #[error("non-finite value {value} at element {index}")]
    NonFiniteData { index: usize, value: f32 },

    #[error("invalid tensor shape: dims {dims:?} describe {expected} elements, data has {actual}")]
    ShapeMismatch {
        dims: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("tensor length {len} is not a positive multiple of 256 (remainder {remainder})")]
    NotMultipleOf256 { len: usize, remainder: usize },

    #[error("group length {actual} does not match the configured length {expected}")]
    WrongGroupLength { expected: usize, actual: usize },

    #[error("degenerate regression: all codes identical")]
    DegenerateRegression,

    #[error("byte stream length {actual} does not match the expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("{field} value {value} at position {index} outside [{min}, {max}]")]
    CodeOutOfRange {
        field: &'static str,
        index: usize,
        value: i64,
        min: i64,
        max: i64,
    },

    #[error("interval sets are not aligned: {0}")]
    AlignmentMismatch(String),

    #[error("invalid interval at weight {index}: [{lo}, {hi}] for weight {weight}")]
    InvalidInterval {
        index: usize,
        lo: f32,
        hi: f32,
        weight: f32,
    },

    #[error("unknown quantization type {0:?}")]
    UnknownQuantType(String),

    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o failure on {path}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
