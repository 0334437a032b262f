//! Multi-modal sequential recommendation over modality-enriched sequence
//! graphs.
//!
//! The crate is `no_std` (with `alloc`): it holds the data transformations,
//! quantizer, graph construction, graph attention layers, the training loop
//! and ranking metrics. File formats, the CLI and experiment orchestration
//! live in the `mmsr` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod base;
pub mod dataset;
mod error;
pub mod metrics;
pub mod model;
pub mod msgraph;
pub mod optim;
pub mod propagation;
pub mod quantizer;
pub mod representation;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Matrix;

/// LeakyReLU slope used by every activation in the model.
pub const LEAKY_SLOPE: f64 = 0.01;
