//! Reverse-mode automatic differentiation on a tape.
//!
//! Tensors are dense `f64` matrices. Besides the usual dense primitives
//! the tape has sparse graph kernels (`spmm_weighted`, `edge_aggregate`)
//! whose gradients reach per-edge weights, and [`Tape::grad`] records a
//! backward pass so that gradients of gradients (meta-gradients through an
//! unrolled training loop) are available.

mod error;
pub mod functional;
pub mod gradcheck;
mod matrix;
pub mod op;
mod tape;

pub use error::{AutodiffError, Result};
pub use matrix::{Csr, Matrix, PairList, SparseOperand};
pub use tape::{Gradients, Tape, Var};
