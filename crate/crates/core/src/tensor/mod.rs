//! Dense matrices and the reverse-mode differentiation tape used by the model.

mod graph;
mod matrix;

pub use graph::{gelu, softmax, softmax_into, Gradients, Graph, ParamId, Var};
pub use matrix::{dot, Matrix};
