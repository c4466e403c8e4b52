//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{check_graph, finite_diff_check, relative_error};
pub use graph::{CustomOp, Graph, Var};
pub use tensor::Tensor;
