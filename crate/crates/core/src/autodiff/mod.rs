//! Dense tensors and reverse-mode differentiation.
//!
//! Everything the encoder needs is expressed as [`Graph`] ops; each op stores
//! what its backward pass needs next to its output, and
//! [`Graph::backward`] walks the node list in reverse.

pub mod checkpoint;
mod element;
pub mod gradcheck;
mod graph;
mod tensor;

pub use element::Element;
pub use gradcheck::{analytic_gradients, grad_check, grad_check_with, GradCheckOptions, GradCheckReport, Precision, ScalarFn};
pub use graph::{GeluKind, Gradients, Graph, Var};
pub use tensor::Tensor;
