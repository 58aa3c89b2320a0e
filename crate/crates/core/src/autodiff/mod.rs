//! Minimal reverse-mode automatic differentiation over dense row-major tensors.

pub mod check;
mod conv;
mod graph;
mod real;

pub use graph::{Graph, Tensor};
pub use real::Real;
