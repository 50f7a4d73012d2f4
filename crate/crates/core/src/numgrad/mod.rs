//! Dense `f64` tensors and a small reverse-mode autodiff graph.
//!
//! The op set is the closure needed by the feature extractor, the hybrid
//! reciprocal-point distance and the three training losses. Graphs are
//! single-threaded; tensors are plain values.

mod graph;
mod tensor;

pub use graph::{Graph, NodeId};
pub use tensor::Tensor;

pub(crate) use graph::{log_sum_exp, softplus};
