//! File formats, the training driver and the command line for the posekan
//! 2D-to-3D pose lifting network. The numerics live in `posekan-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod driver;
pub mod error;
pub mod skeleton;

pub use error::{Error, Result};
