use std::path::PathBuf;

use autodiff::AutodiffError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(AutodiffError),
    #[error("unrolled training exceeds the tape memory cap ({used} > {cap} bytes)")]
    MemoryCap { cap: usize, used: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),
    #[error("label {label} of node {node} out of range for {classes} classes")]
    LabelOutOfRange { node: usize, label: usize, classes: usize },
    #[error("class {class} has {available} nodes, {requested} requested")]
    ClassTooSmall {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("pair ({0}, {1}) is not a valid i<j pair for {2} nodes")]
    InvalidPair(usize, usize, usize),
    #[error("duplicate pair ({0}, {1})")]
    DuplicatePair(usize, usize),
    #[error("flip set computed against graph {expected}, applied to {found}")]
    BaseMismatch { expected: String, found: String },
    #[error("index {index} out of range for {len}")]
    IndexOutOfRange { index: u64, len: u64 },
    #[error("features are not binary (node {node}, value {value})")]
    NonBinaryFeatures { node: usize, value: f64 },
    #[error("negative edge weight {0}")]
    NegativeWeight(f64),
    #[error("empty node set")]
    EmptyNodeSet,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("cannot sample a block of {requested} from {available} free indices")]
    InfeasibleBlock { requested: u64, available: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl From<AutodiffError> for Error {
    fn from(e: AutodiffError) -> Self {
        match e {
            AutodiffError::MemoryCap { cap, used } => Error::MemoryCap { cap, used },
            AutodiffError::EmptyNodeSet => Error::EmptyNodeSet,
            other => Error::Autodiff(other),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
