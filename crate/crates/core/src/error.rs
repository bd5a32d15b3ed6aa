use std::path::PathBuf;

use thiserror::Error;

use crate::plugin::PluginError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("unsupported or corrupt image {}: {reason}", .path.display())]
    Decode { path: PathBuf, reason: String },

    #[error("zero-dimension image ({width}x{height})")]
    ZeroDimension { width: usize, height: usize },

    #[error("buffer length {len} does not match {width}x{height}")]
    BufferLength {
        width: usize,
        height: usize,
        len: usize,
    },

    #[error("unquantized intensity {value} at pixel {index}")]
    Unquantized { index: usize, value: f64 },

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("image {width}x{height} is smaller than the required {min}x{min}")]
    TooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input")]
    Empty,

    #[error("method sets differ between rankings: {0}")]
    MethodSetMismatch(String),

    #[error("rank correlation undefined: {0}")]
    DegenerateRanking(String),

    #[error("dataset {dataset}: {reason}")]
    Dataset { dataset: String, reason: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("csv schema error: {0}")]
    CsvSchema(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("fairness violation: inputs of dataset {dataset} differ from the materialized copy around method {method}")]
    Fairness { dataset: String, method: String },

    #[error(transparent)]
    Plugin(#[from] PluginError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
