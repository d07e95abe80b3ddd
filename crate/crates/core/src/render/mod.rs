//! Screen-space projection and tile-based differentiable rasterization.

mod backward;
mod forward;
mod project;

pub use backward::{render_backward, CloudGradients, OutputGrads};
pub use forward::{render, render_from_cloud, BlendRecord, RenderOutput};
pub use project::{project, ProjectedGaussian, ProjectionResult};

pub(crate) use project::ProjDetail;

pub const TILE_SIZE: usize = 16;
/// Contributions below this alpha are skipped (8-bit quantization floor).
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Alpha ceiling keeping transmittance strictly positive.
pub const ALPHA_CLAMP: f64 = 0.99;

/// Rasterizer settings shared by the forward and backward passes.
#[derive(Debug, Clone)]
pub struct RenderOptions {
    pub background: [f64; 3],
    pub near_clip: f64,
    /// Low-pass dilation added to the 2D covariance diagonal (px²).
    pub dilation: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            near_clip: 0.01,
            dilation: 0.3,
        }
    }
}
