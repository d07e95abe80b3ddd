//! Single-view RGBD dynamic Gaussian splatting.
//!
//! Reconstructs a deforming surface from an RGBD video with occlusion masks:
//! dense depth-based initialization, a differentiable CPU rasterizer with
//! color / depth / hallucination channels, physics-regularized per-frame
//! tracking, and quality metrics.

pub mod buffer;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod math;
pub mod graph;
pub mod init;
pub mod knn;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod render;

pub mod test_clouds;

pub use error::{Result, SplatError};
