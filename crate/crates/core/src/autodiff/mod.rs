//! Dense 2-D tensors with tape-based reverse-mode differentiation, a
//! finite-difference checker and the Adam optimizer.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{analytic_grads, grad_check, grad_check_against, relative_error, GradCheckReport};
pub use graph::{sigmoid, softmax_in_place, softmax_rows, CustomOp, Elementwise, Graph, Var, PROB_CLAMP};
pub use tensor::Tensor;

pub(crate) use graph::clamp_prob;
