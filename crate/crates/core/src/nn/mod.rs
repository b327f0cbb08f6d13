//! Reverse-mode numerics: tensors, a gradient tape, parameters and optimizers.

use alloc::vec::Vec;
use core::fmt;

pub mod functional;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use functional::{activation, affine_forward, dropout, mse_loss, Activation};
pub use gradcheck::{grad_check, GradCheck};
pub use optim::{optimizer_step, OptState, OptimizerKind};
pub use params::{add_l2_grad, glorot_uniform, l2_penalty, Param, ParamKind, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum NnError {
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::ShapeMismatch { expected, found } => {
                write!(f, "shape mismatch: expected {expected:?}, found {found:?}")
            }
        }
    }
}
