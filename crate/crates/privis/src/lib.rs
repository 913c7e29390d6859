//! File formats, checkpoints, manifests, reports and pipeline commands
//! around `privis-core`.

pub mod checkpoint;
pub mod config;
pub mod depthio;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
