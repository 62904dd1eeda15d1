//! Training and inference engine for NL-CNN: macro-layers of cascaded 3×3
//! convolutions emulating nonlinear convolution, with an exact
//! parameter-count oracle and a hyper-parameter sweep harness.
//!
//! The crate is organized around five stages:
//! - [`ops`] — rank-4 tensor kernels (conv, pooling, batch norm, dense, loss)
//!   with hand-derived backward passes;
//! - [`model`] — hyper-parameters to layer plan, exact parameter counts,
//!   MAC estimates, receptive fields;
//! - [`network`] — materialized weights, forward/backward composition, a flat
//!   parameter/gradient registry;
//! - [`trainer`] — mini-batch Adam loop with deterministic seeding;
//! - [`datasets`] / [`model_io`] — IDX / CIFAR-10 loaders and a
//!   self-describing binary weight format.

pub mod datasets;
pub mod error;
pub mod model;
pub mod model_io;
pub mod network;
pub mod ops;
pub mod parallel;
pub mod scalar;
pub mod tensor;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor4;
