//! Dense tensors and tape-based reverse-mode differentiation.

mod graph;
pub mod kernels;
pub mod ops;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;
pub(crate) use tensor::argmax;
