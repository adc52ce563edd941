//! Depth-uncertainty propagation into voxel occupancy grids and hierarchical
//! conformal prediction for class-imbalanced voxel classification.
//!
//! This crate is `no_std` and only needs `alloc`. File formats, JSON model
//! files, threading and the command-line tool live in the `uqvox` crate.
//!
//! Class labels are 1-based throughout: label `1` is the empty class and
//! labels `2..=M` are occupied (semantic) classes.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod conformal;
pub mod depth_uq;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod projection;
pub mod rng;
pub mod split;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{
    BinaryOccupancyGrid, CameraIntrinsics, DepthEstimate, GridGeometry, GroundTruthDepth,
    LabelGrid, ProbOccupancyGrid, SoftmaxGrid, EMPTY_CLASS, SOFTMAX_TOLERANCE,
};
