use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("pixel {pixel} probabilities sum to {sum}, outside 1 ± {tolerance}")]
    Normalization { pixel: usize, sum: f64, tolerance: f64 },

    #[error("label value {value} at pixel {pixel} is out of range for {class_count} classes")]
    ClassRange {
        value: u32,
        pixel: usize,
        class_count: usize,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("class count mismatch: expected {expected}, found {found}")]
    ClassCountMismatch { expected: usize, found: usize },

    #[error("validation fold is empty")]
    EmptyFold,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("every class score is undefined")]
    AllUndefined,

    #[error("infeasible class coverage: {0}")]
    InfeasibleCoverage(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("synthetic dataset must contain at least one image")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
