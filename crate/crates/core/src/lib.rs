//! Physics-informed deep inverse operator networks.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: scalar reverse-mode graph plus order-2 directional jets.
//! * [`nets`]: MLP and convolution-stack specs, parameter storage, application.
//! * [`model`]: branch/trunk assembly for the reconstruction and inverse operators.
//! * [`physics`]: benchmark PDE descriptors, residuals and loss assembly.
//! * [`datagen`]: random fields, finite-difference solvers, datasets on disk.
//! * [`training`]: Adam, the training loop, evaluation, sweeps, checkpoints.
//! * [`cli`]: the `invop` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x < t)` is how NaN is rejected

pub mod autodiff;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod model;
pub mod nets;
pub mod physics;
pub mod training;

pub use error::{Error, Result};
