//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! The primitive set is fixed to what the segmentation model and the attack
//! objectives need: matmul, bias/elementwise add and sub, scaling, relu,
//! tanh, square, column concatenation, row gathering, grouped max/mean,
//! per-row max (with an optional excluded column), column picking, row
//! norms, sums and softmax cross-entropy. There is no broadcasting.

mod gradcheck;
mod graph;
mod tape;
mod tensor;

pub use gradcheck::{
    finite_diff_check, relative_error, GradCheckReport, GradEntry, ScalarFunction, REL_ERROR_FLOOR,
};
pub use graph::{backward_grad, forward_eval, Evaluation, Graph, GraphOp, Inputs, Prim};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
