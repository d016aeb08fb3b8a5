//! Dense tensors and a small reverse-mode autodiff tape.

mod graph;
mod gradcheck;
mod gru;
mod tensor;

pub use graph::{sigmoid, Gradients, Graph, Mode, RowMix, Var};
pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport, REL_FLOOR};
pub use gru::{gru_cell, gru_step, GruWeights};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
