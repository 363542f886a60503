//! Reverse-mode automatic differentiation over dense tensors.

mod graph;
mod gemm;
pub(crate) mod kernels;

pub mod gradcheck;

pub use graph::{Activation, Graph, Var};
