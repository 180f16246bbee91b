use thiserror::Error;

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("index {index} out of range (len {len}) in {op}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("data of length {len} does not fit shape {rows}x{cols}")]
    DataLength { len: usize, rows: usize, cols: usize },
    #[error("backward needs a scalar output, got {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("tensor #{0} does not require gradients")]
    Detached(usize),
    #[error("tensor #{0} is not on this tape")]
    UnknownTensor(usize),
    #[error("empty node set")]
    EmptyNodeSet,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("tape memory cap exceeded: {used} > {cap} bytes")]
    MemoryCap { cap: usize, used: usize },
    #[error("invalid finite-difference step {0}")]
    InvalidStep(f64),
    #[error("{0}")]
    InvalidArgument(String),
}
