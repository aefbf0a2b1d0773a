//! Task-incremental learning for small convolutional networks.
//!
//! A pretrained baseline network is frozen and every new task learns only a
//! compact perturbation of it: one binary mask bit per backbone weight, a
//! handful of affine coefficients per layer, task-specific batch-norm
//! parameters and a classifier head. Old tasks can never degrade because the
//! shared weights are never written again.
//!
//! The crate is organized as a library with one thin command-line binary;
//! the `examples/` directory holds one runnable program per major
//! capability.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod mask;
pub mod nn;
pub mod registry;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
