//! Minimal reverse-mode differentiation over dense `f64` tensors.

mod check;
mod graph;
mod tensor;

pub use check::{finite_diff_check, finite_diff_check_many};
pub use graph::{clamped_odds, log_sum_exp, sigmoid, softplus, Graph, NodeId};
pub use tensor::Tensor;
