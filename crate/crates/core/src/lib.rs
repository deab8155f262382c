//! Dual rectified and dual exponential linear units inside quasi-recurrent
//! networks, with the autodiff engine, layers and character-level language
//! modelling harness needed to train and analyse them.

pub mod activations;
pub mod analysis;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod lm;
pub mod tensor;
pub mod train;

pub use activations::ActivationKind;
pub use error::{Error, Result};
pub use tensor::{Param, Tape, Tensor, Var};
