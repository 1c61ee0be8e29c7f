//! Dense tensors, reverse-mode differentiation and a gradient checker.

mod attention;
pub mod gradcheck;
pub mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
