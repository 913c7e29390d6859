//! Allocation-only core of the low-resolution depth recognition pipeline.
//!
//! Everything here is pure computation over in-memory buffers: a small
//! reverse-mode autodiff engine, Keys bicubic resampling with the
//! resolution-based privacy gate, the DCSCN super-resolution model, the
//! residual classifier with its metrics, and the procedural depth-scene
//! generator. File formats and the command-line front end live in the
//! `privis` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod classify;
pub mod error;
pub mod frame;
pub mod metrics;
pub mod optim;
pub mod oracle;
pub mod params;
pub mod resample;
pub mod rng;
pub mod sr;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use frame::{normalize_depth, privacy_gate, privacy_level, DepthFrame, DepthRange, PrivacyLevel, Provenance};
pub use tensor::{Element, Tensor};
