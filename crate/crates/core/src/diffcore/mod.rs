//! Minimal reverse-mode automatic differentiation: tensors, a recording
//! tape with the ops the VAE+GAN networks need, named parameter stores,
//! Adam, and a finite-difference gradient checker.

mod gradcheck;
pub mod init;
mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use optim::{AdamConfig, OptimizerKind, OptimizerState};
pub use params::{ParamGrads, ParamStore};
pub use tape::{Gradients, Tape, TapeNode, Var, EPS_LOG};
pub use tensor::{Scalar, Tensor};
