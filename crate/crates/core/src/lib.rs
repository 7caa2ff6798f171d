//! Unidirectional recurrent video super-resolution with hidden-state
//! attention, a synthetic degradation pipeline, a small trainer and a lab for
//! hidden-state experiments.

pub mod autodiff;
pub mod degradation;
pub mod engine;
pub mod io;
pub mod rng;
pub mod trainer;
pub mod error;
pub mod filter_bank;
pub mod hsa;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::{FlowField, Tensor};
