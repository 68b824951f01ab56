//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! The primitive set is deliberately small (matmul, elementwise arithmetic,
//! relu, sigmoid, softmax, mean, population std, cross-entropy, reshape,
//! concat and a few indexing helpers), which is enough to train MLP
//! classifiers and the conditional trigger generator.

mod graph;
mod tensor;

pub use graph::{population_std, sigmoid, softmax_rows, Gradients, Graph, Var, LOG_EPS};
pub use tensor::{argmax, Tensor};
pub(crate) use tensor::gemm;
