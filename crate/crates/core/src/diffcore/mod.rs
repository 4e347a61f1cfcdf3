//! Dense tensors with reverse-mode differentiation.
//!
//! Computation is recorded on a [`Tape`] as it runs; the tape is rebuilt for
//! every forward pass and supports exactly one [`Tape::backward`] call.
//! All arithmetic is `f64`.

mod gradcheck;
pub mod nn;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{interp_row, log_sigmoid, sigmoid, DeformLayout, Gradients, Tape, Var};
pub use tensor::Tensor;
