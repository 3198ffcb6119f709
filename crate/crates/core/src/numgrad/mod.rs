//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is a tape: every operation is evaluated eagerly, its output is
//! cached on a new node, and [`Graph::backward`] walks the tape once in
//! reverse to accumulate gradients. Graphs are cheap single-use values; the
//! training loops build a fresh one per optimizer step.
//!
//! ```
//! use invdesign_core::numgrad::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).data(), &[6.0]);
//! ```

mod graph;
pub mod nn;
mod tensor;

pub use graph::{BinaryOp, CustomOp, Gradients, Graph, NodeId, Reduction, UnaryOp};
pub use tensor::Tensor;

pub(crate) use tensor::affine;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("tensor {rows}x{cols} needs {} entries, got {len}", rows * cols)]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("{op}: index {index} out of bounds for shape {shape:?}")]
    Index {
        op: &'static str,
        index: usize,
        shape: (usize, usize),
    },
    #[error("{op} of an empty tensor")]
    Empty { op: &'static str },
    #[error("backward needs a scalar root, got shape {shape:?}")]
    NotScalar { shape: (usize, usize) },
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
}
