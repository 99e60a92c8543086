use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite coordinate ({0}, {1}, {2})")]
    NonFinitePoint(f64, f64, f64),

    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("point cloud shape mismatch: {0}")]
    CloudShape(String),

    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("grid buffer needs {requested} slots, cap is {cap}")]
    Capacity { requested: u64, cap: u64 },

    #[error("sampling strategy {0} requires finite extents")]
    MissingExtents(&'static str),

    #[error("index {index} out of range for cloud of {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("kernel resolution must be a positive odd integer, got {0}")]
    KernelResolution(usize),

    #[error("{path}: parse error at byte offset {offset}: {reason}")]
    Parse { path: PathBuf, offset: u64, reason: String },

    #[error("weight blob: {0}")]
    Blob(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
