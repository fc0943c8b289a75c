//! Dense `f32` math for training: matrices, loss, optimizer and a
//! finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod ops;
mod optim;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub(crate) use matrix::gemm;
pub use matrix::{matmul, matmul_nt, matmul_tn, Matrix};
pub use ops::{cross_entropy, layer_norm, softmax_rows, CrossEntropy, IGNORE_INDEX};
pub(crate) use ops::{cross_entropy_scaled, gelu, gelu_grad, layer_norm_backward, layer_norm_forward, LayerNormCache};
pub(crate) use optim::adam_update;
pub use optim::{adam_step, AdamState, Parameter};
