//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::finite_difference_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
