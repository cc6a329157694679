//! Numeric core of a graph Kolmogorov-Arnold network for lifting 2D human
//! keypoints to 3D joints.
//!
//! Every layer carries an exact hand-written backward pass; the crate is
//! `no_std` and needs only `alloc`. File formats, the training driver and the
//! command line live in the `posekan` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kan;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod spline;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{PropagationMatrix, SkeletonGraph, SpectralFilter};
pub use kan::KanLayer;
pub use matrix::Matrix;
pub use model::{ForwardCtx, ModelConfig, PoseKanModel};
pub use nn::Mode;
pub use optim::{Amsgrad, LrSchedule, TrainState};
pub use spline::SplineGrid;
