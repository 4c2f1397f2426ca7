//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! Every backward rule is written in terms of differentiable [`Var`] operations, so
//! gradients can themselves be differentiated (`create_graph = true`). This is what
//! gradient penalties such as r1 need.

mod float;
mod graph;
mod ops;
mod tensor;

pub use float::Float;
pub use graph::{grad, grad_with_seed, is_grad_enabled, no_grad, Backward, Var};
pub use ops::{conv2d, linear, Conv2dSpec};
pub use tensor::{broadcast_shapes, numel, Tensor};
