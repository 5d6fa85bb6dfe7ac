//! Spatio-temporal MLP (st-MLP) for skeleton-based gesture recognition.
//!
//! This crate holds everything that is pure computation: the dense matrix
//! kernel and its vector-Jacobian products, the network layers, the mixing
//! block model and its ablation variants, optimizers and the training loop,
//! skeleton-sequence preprocessing, and confusion-matrix metrics.
//!
//! It builds without `std` (only `alloc` is required). File formats, the CLI
//! and wall-clock benchmarking live in the `stmlp` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod infer;
pub mod layers;
mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams};
pub use tensor::Matrix;
