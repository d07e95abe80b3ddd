//! Dense Gaussian cloud initialization from the first RGBD frame:
//! backprojection, disparity baseline fitting, depth filling, and initial
//! parameter assignment.

use nalgebra::Vector3;

use crate::buffer::{MaskImage, ScalarImage};
use crate::error::{Result, SplatError};
use crate::knn;
use crate::math::{logit, quat_identity, SH_DC};
use crate::model::{Camera, FrameObservation, GaussianCloud, SourceFlag};

/// One 3D point per usable pixel, in world coordinates.
#[derive(Debug, Clone)]
pub struct DensePointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<[f64; 3]>,
    pub sources: Vec<SourceFlag>,
    pub pixel_origins: Vec<(u32, u32)>,
}

impl DensePointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Backprojects every pixel with mask = 1 and valid depth:
/// X = (x−cx)·D/fx, Y = (y−cy)·D/fy, Z = D, then camera → world.
pub fn backproject(frame: &FrameObservation, camera: &Camera) -> Result<DensePointCloud> {
    if frame.width() != camera.width || frame.height() != camera.height {
        return Err(SplatError::ShapeMismatch(format!(
            "frame {}×{} does not match camera {}×{}",
            frame.width(),
            frame.height(),
            camera.width,
            camera.height
        )));
    }
    let mut out = DensePointCloud {
        points: Vec::new(),
        colors: Vec::new(),
        sources: Vec::new(),
        pixel_origins: Vec::new(),
    };
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            if !frame.tool_mask.get(x, y) || !frame.depth_valid.get(x, y) {
                continue;
            }
            let d = frame.depth.get(x, y);
            let cam_point = Vector3::new(
                (x as f64 - camera.cx) * d / camera.fx,
                (y as f64 - camera.cy) * d / camera.fy,
                d,
            );
            out.points.push(camera.camera_to_world_point(&cam_point));
            out.colors.push(frame.image.get(x, y));
            out.sources.push(frame.source_flags[y * frame.width() + x]);
            out.pixel_origins.push((x as u32, y as u32));
        }
    }
    if out.is_empty() {
        return Err(SplatError::EmptyInitialization);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct BaselineFit {
    pub baseline: f64,
    pub median_residual: f64,
    pub pixels_used: usize,
}

const MIN_BASELINE_PIXELS: usize = 100;

/// Fits the stereo baseline `b` minimizing Σ |fx·b/disp − depth| over pixels
/// where both disparity and ground-truth depth are available, by
/// golden-section search to 1e-6 relative tolerance.
pub fn fit_baseline(
    disparity: &ScalarImage,
    gt_depth: &ScalarImage,
    depth_valid: &MaskImage,
    fx: f64,
) -> Result<BaselineFit> {
    if !disparity.same_shape(gt_depth)
        || disparity.width != depth_valid.width
        || disparity.height != depth_valid.height
    {
        return Err(SplatError::ShapeMismatch(
            "disparity, depth, and validity must share dimensions".into(),
        ));
    }
    let mut pairs: Vec<(f64, f64)> = Vec::new(); // (disp, depth)
    for i in 0..disparity.data.len() {
        let disp = disparity.data[i];
        if disp > 0.0 && depth_valid.data[i] != 0 {
            pairs.push((disp, gt_depth.data[i]));
        }
    }
    if pairs.len() < MIN_BASELINE_PIXELS {
        return Err(SplatError::InsufficientOverlap {
            found: pairs.len(),
            needed: MIN_BASELINE_PIXELS,
        });
    }

    let objective = |b: f64| -> f64 {
        pairs
            .iter()
            .map(|&(disp, depth)| (fx * b / disp - depth).abs())
            .sum()
    };

    // The per-pixel exact solutions bound the optimum of this convex
    // piecewise-linear objective.
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &(disp, depth) in &pairs {
        let b = depth * disp / fx;
        lo = lo.min(b);
        hi = hi.max(b);
    }
    lo = (lo * 0.5).max(1e-12);
    hi = (hi * 1.5).max(lo * 2.0);

    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while (b - a) > 1e-6 * b.abs().max(1e-12) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = objective(d);
        }
    }
    let baseline = (a + b) / 2.0;

    let mut residuals: Vec<f64> = pairs
        .iter()
        .map(|&(disp, depth)| (fx * baseline / disp - depth).abs())
        .collect();
    residuals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let median_residual = residuals[residuals.len() / 2];
    Ok(BaselineFit {
        baseline,
        median_residual,
        pixels_used: pairs.len(),
    })
}

/// Fills invalid-depth pixels that have positive disparity with
/// `fx·b/disp`, flagging them FILLED_DEPTH. GT pixels are untouched.
pub fn fill_depth(frame: &FrameObservation, baseline: f64, camera: &Camera) -> FrameObservation {
    let mut out = frame.clone();
    let Some(disparity) = &frame.disparity else {
        return out;
    };
    for i in 0..out.depth.data.len() {
        if out.depth_valid.data[i] == 0 && disparity.data[i] > 0.0 {
            out.depth.data[i] = camera.fx * baseline / disparity.data[i];
            out.depth_valid.data[i] = 1;
            out.source_flags[i] = SourceFlag::FilledDepth;
        }
    }
    out
}

/// Initial-parameter policy for [`init_cloud`].
#[derive(Debug, Clone)]
pub struct InitConfig {
    /// Keep every `stride`-th pixel in each direction (1 = all).
    pub stride: usize,
    pub sh_degree: usize,
    pub initial_opacity: f64,
    /// Hallucination prior for filled-depth / tool-hole points.
    pub hallucination_filled: f64,
    /// Hallucination prior for observed points.
    pub hallucination_observed: f64,
    /// Override for the scene extent; computed from the point bounding box
    /// when absent.
    pub scene_extent: Option<f64>,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            sh_degree: 0,
            initial_opacity: 0.5,
            hallucination_filled: 0.9,
            hallucination_observed: 0.1,
            scene_extent: None,
        }
    }
}

/// One Gaussian per (subsampled) point: position from backprojection,
/// identity rotation, isotropic scale from the 3-NN mean distance,
/// provenance-encoded hallucination logits.
pub fn init_cloud(
    points: &DensePointCloud,
    tool_mask: &MaskImage,
    config: &InitConfig,
) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(SplatError::EmptyInitialization);
    }
    let stride = config.stride.max(1);
    let keep: Vec<usize> = (0..points.len())
        .filter(|&i| {
            let (x, y) = points.pixel_origins[i];
            x as usize % stride == 0 && y as usize % stride == 0
        })
        .collect();
    if keep.is_empty() {
        return Err(SplatError::EmptyInitialization);
    }
    let positions: Vec<Vector3<f64>> = keep.iter().map(|&i| points.points[i]).collect();

    let scene_extent = config.scene_extent.unwrap_or_else(|| {
        let mut lo = positions[0];
        let mut hi = positions[0];
        for p in &positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let diag = (hi - lo).norm();
        if diag > 0.0 {
            diag
        } else {
            1.0
        }
    });

    let neighbors = knn::knn(&positions, 3);
    let scales: Vec<f64> = neighbors
        .iter()
        .map(|nn| {
            if nn.is_empty() {
                scene_extent / 100.0
            } else {
                let mean = nn.iter().map(|&(_, d)| d).sum::<f64>() / nn.len() as f64;
                mean.clamp(1e-4, scene_extent / 10.0)
            }
        })
        .collect();

    let n_sh = crate::math::sh_coeff_count(config.sh_degree);
    let mut cloud = GaussianCloud::empty(config.sh_degree);
    for (slot, &i) in keep.iter().enumerate() {
        cloud.positions.push(positions[slot]);
        cloud.rotations.push(quat_identity());
        cloud.log_scales.push(Vector3::repeat(scales[slot].ln()));
        cloud.opacity_logits.push(logit(config.initial_opacity));
        let (px, py) = points.pixel_origins[i];
        let in_hole = !tool_mask.get(px as usize, py as usize);
        let h = if points.sources[i] == SourceFlag::FilledDepth || in_hole {
            config.hallucination_filled
        } else {
            config.hallucination_observed
        };
        cloud.hallucination_logits.push(logit(h));
        let c = points.colors[i];
        cloud.sh_coeffs.push([c[0] / SH_DC, c[1] / SH_DC, c[2] / SH_DC]);
        for _ in 1..n_sh {
            cloud.sh_coeffs.push([0.0; 3]);
        }
    }
    Ok(cloud)
}
