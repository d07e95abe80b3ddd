//! Training losses: masked photometric and depth supervision, Huber depth
//! smoothness, the three physics regularizers over the neighbor graph, and the
//! hallucination-map loss. Each returns its value together with gradients with
//! respect to its direct inputs; image-space terms produce gradient images
//! that seed the rasterizer's backward pass.

use nalgebra::{Matrix3, Vector4};

use crate::buffer::{ColorImage, MaskImage, ScalarImage};
use crate::error::{Result, SplatError};
use crate::graph::RegularizationGraph;
use crate::math::{normalize_backward, quat_conjugate, quat_mul, quat_to_rotation, rotation_backward};
use crate::model::{GaussianCloud, SourceFlag};
use crate::render::{CloudGradients, OutputGrads, RenderOutput};

/// Term weights for the combined objectives.
#[derive(Debug, Clone)]
pub struct LossWeights {
    pub image: f64,
    pub depth: f64,
    pub rigid: f64,
    pub rotation: f64,
    pub isometry: f64,
    pub hallucination: f64,
    pub smoothness: f64,
    /// Down-weight in [0,1] for depth supervision on disparity-filled pixels.
    pub w_filled: f64,
    /// Huber transition point for the smoothness term.
    pub huber_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            image: 1.0,
            depth: 0.5,
            rigid: 4.0,
            rotation: 4.0,
            isometry: 2.0,
            hallucination: 0.1,
            smoothness: 0.01,
            w_filled: 0.1,
            huber_delta: 0.01,
        }
    }
}

/// Per-term values of a combined objective, pre-weighting.
#[derive(Debug, Clone, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub image: f64,
    pub depth: f64,
    pub rigid: f64,
    pub rotation: f64,
    pub isometry: f64,
    pub hallucination: f64,
    pub smoothness: f64,
}

impl LossBreakdown {
    /// CSV row matching the header `iter,frame,total,image,depth,rigid,rot,iso,halluc,smooth`.
    pub fn csv_row(&self, iter: usize, frame: usize) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            iter,
            frame,
            self.total,
            self.image,
            self.depth,
            self.rigid,
            self.rotation,
            self.isometry,
            self.hallucination,
            self.smoothness
        )
    }
}

pub const LOSS_CSV_HEADER: &str = "iter,frame,total,image,depth,rigid,rot,iso,halluc,smooth";

/// L1 subgradient: sign with value 0 at 0 (f64::signum is 1 at +0).
fn sign(d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        d.signum()
    }
}

/// Mean absolute color error over masked pixels (all channels); the gradient
/// image is sign/count on masked pixels, zero elsewhere.
pub fn image_l1(
    rendered: &ColorImage,
    observed: &ColorImage,
    mask: &MaskImage,
) -> Result<(f64, ColorImage)> {
    if !rendered.same_shape(observed) || rendered.width != mask.width || rendered.height != mask.height
    {
        return Err(SplatError::ShapeMismatch("image_l1 inputs must share shape".into()));
    }
    let masked = mask.count_set();
    if masked == 0 {
        return Err(SplatError::EmptySupervision);
    }
    let count = (3 * masked) as f64;
    let mut grad = ColorImage::new(rendered.width, rendered.height);
    let mut sum = 0.0;
    for i in 0..rendered.data.len() {
        if mask.data[i] == 0 {
            continue;
        }
        for c in 0..3 {
            let d = rendered.data[i][c] - observed.data[i][c];
            sum += d.abs();
            grad.data[i][c] = sign(d) / count;
        }
    }
    Ok((sum / count, grad))
}

/// Weighted L1 between alpha-normalized rendered depth D̂/A and observed depth.
///
/// Per-pixel weight: 1 on GT depth, `w_filled` on disparity-filled depth, 0
/// elsewhere or where the mask is off or coverage A < 0.5. Returns gradients
/// with respect to both the depth accumulator and the alpha channel.
pub fn depth_l1(
    rendered_depth: &ScalarImage,
    rendered_alpha: &ScalarImage,
    observed: &ScalarImage,
    mask: &MaskImage,
    source_flags: &[SourceFlag],
    w_filled: f64,
) -> Result<(f64, ScalarImage, ScalarImage)> {
    if !rendered_depth.same_shape(rendered_alpha)
        || !rendered_depth.same_shape(observed)
        || rendered_depth.width != mask.width
        || rendered_depth.height != mask.height
        || source_flags.len() != rendered_depth.data.len()
    {
        return Err(SplatError::ShapeMismatch("depth_l1 inputs must share shape".into()));
    }
    let n = rendered_depth.data.len();
    let mut weights = vec![0.0f64; n];
    let mut weight_sum = 0.0;
    for i in 0..n {
        if mask.data[i] == 0 || rendered_alpha.data[i] < 0.5 {
            continue;
        }
        let u = match source_flags[i] {
            SourceFlag::GtDepth => 1.0,
            SourceFlag::FilledDepth => w_filled,
            SourceFlag::Invalid => 0.0,
        };
        weights[i] = u;
        weight_sum += u;
    }
    if weight_sum == 0.0 {
        return Err(SplatError::EmptySupervision);
    }
    let mut grad_depth = ScalarImage::new(rendered_depth.width, rendered_depth.height);
    let mut grad_alpha = ScalarImage::new(rendered_depth.width, rendered_depth.height);
    let mut sum = 0.0;
    for i in 0..n {
        let u = weights[i];
        if u == 0.0 {
            continue;
        }
        let a = rendered_alpha.data[i];
        let r = rendered_depth.data[i] / a - observed.data[i];
        sum += u * r.abs();
        let s = u * sign(r) / weight_sum;
        grad_depth.data[i] = s / a;
        grad_alpha.data[i] = -s * rendered_depth.data[i] / (a * a);
    }
    Ok((sum / weight_sum, grad_depth, grad_alpha))
}

fn huber(d: f64, delta: f64) -> (f64, f64) {
    if d.abs() < delta {
        (0.5 * d * d, d)
    } else {
        (delta * (d.abs() - 0.5 * delta), delta * d.signum())
    }
}

/// Huber penalty on horizontal and vertical neighbor differences of the
/// rendered depth, averaged over pairs whose two pixels are both masked.
/// Zero pairs is not an error: the loss is simply 0.
pub fn depth_smoothness_huber(
    rendered_depth: &ScalarImage,
    mask: &MaskImage,
    delta: f64,
) -> Result<(f64, ScalarImage)> {
    if rendered_depth.width != mask.width || rendered_depth.height != mask.height {
        return Err(SplatError::ShapeMismatch("depth smoothness inputs must share shape".into()));
    }
    if delta <= 0.0 {
        return Err(SplatError::Config(format!("huber delta must be > 0, got {delta}")));
    }
    let (w, h) = (rendered_depth.width, rendered_depth.height);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mask.data[i] == 0 {
                continue;
            }
            if x + 1 < w && mask.data[i + 1] != 0 {
                pairs.push((i, i + 1));
            }
            if y + 1 < h && mask.data[i + w] != 0 {
                pairs.push((i, i + w));
            }
        }
    }
    let mut grad = ScalarImage::new(w, h);
    if pairs.is_empty() {
        return Ok((0.0, grad));
    }
    let count = pairs.len() as f64;
    let mut sum = 0.0;
    for (a, b) in pairs {
        let d = rendered_depth.data[a] - rendered_depth.data[b];
        let (v, g) = huber(d, delta);
        sum += v;
        grad.data[a] += g / count;
        grad.data[b] -= g / count;
    }
    Ok((sum / count, grad))
}

fn check_graph_shapes(
    a: &GaussianCloud,
    b: &GaussianCloud,
    graph: &RegularizationGraph,
) -> Result<()> {
    if a.len() != b.len() || a.len() != graph.len() {
        return Err(SplatError::ShapeMismatch(format!(
            "graph losses need matching sizes (clouds {} / {}, graph {})",
            a.len(),
            b.len(),
            graph.len()
        )));
    }
    Ok(())
}

/// Local-rigidity penalty: neighbor offsets in the previous frame should map
/// onto current offsets under each Gaussian's relative rotation. Mean of
/// w·‖Δμ_prev − R_prev R_currᵀ Δμ_curr‖ over all graph edges; gradients go to
/// the current frame's positions and rotations (the previous frame is a
/// constant during frame-t optimization).
pub fn rigid_loss(
    prev: &GaussianCloud,
    curr: &GaussianCloud,
    graph: &RegularizationGraph,
) -> Result<(f64, CloudGradients)> {
    check_graph_shapes(prev, curr, graph)?;
    let mut grads = CloudGradients::zeros(curr);
    let edges = graph.edge_count();
    if edges == 0 {
        return Ok((0.0, grads));
    }
    let inv = 1.0 / edges as f64;
    let mut sum = 0.0;
    for i in 0..graph.len() {
        let r_prev = quat_to_rotation(&prev.rotations[i]);
        let r_curr = quat_to_rotation(&curr.rotations[i]);
        let mut grad_r_curr = Matrix3::zeros();
        for (e, &j) in graph.neighbors[i].iter().enumerate() {
            let j = j as usize;
            let w = graph.weights[i][e];
            let d_prev = prev.positions[j] - prev.positions[i];
            let d_curr = curr.positions[j] - curr.positions[i];
            // m lives in the current Gaussian's local frame; e compares the
            // previous offset against the back-rotated current offset.
            let m = r_curr.transpose() * d_curr;
            let err = d_prev - r_prev * m;
            let norm = err.norm();
            sum += w * norm * inv;
            if norm < 1e-15 {
                continue;
            }
            let unit = err / norm;
            let s = w * inv;
            // dL/d(d_curr) through m = R_currᵀ d_curr and e = d_prev − R_prev m.
            let dl_dm = -(r_prev.transpose() * unit) * s;
            let dl_dd = r_curr * dl_dm;
            grads.positions[j] += dl_dd;
            grads.positions[i] -= dl_dd;
            // m = R_currᵀ d ⇒ ∂L/∂R_curr[p][q] = d[p]·(∂L/∂m)[q].
            grad_r_curr += d_curr * dl_dm.transpose();
        }
        grads.rotations[i] += rotation_backward(&curr.rotations[i], &grad_r_curr);
    }
    Ok((sum, grads))
}

fn unit_quat(q: &Vector4<f64>) -> Vector4<f64> {
    q / q.norm()
}

/// Rotation-coherence penalty: neighboring Gaussians should rotate together
/// between frames. (1/(k·N))·Σ w·‖q̂_j,t ⊗ q̂_j,t−1⁻¹ − q̂_i,t ⊗ q̂_i,t−1⁻¹‖;
/// gradients go to the current frame's quaternions.
pub fn rot_loss(
    prev: &GaussianCloud,
    curr: &GaussianCloud,
    graph: &RegularizationGraph,
) -> Result<(f64, CloudGradients)> {
    check_graph_shapes(prev, curr, graph)?;
    let mut grads = CloudGradients::zeros(curr);
    let n = graph.len();
    let inv = 1.0 / (graph.k as f64 * n as f64);
    // Relative rotation per Gaussian, plus the Jacobian of the quaternion
    // product r = q̂_t ⊗ q̂_{t−1}⁻¹ with respect to q̂_t (the product is linear
    // in q̂_t, so columns are basis quaternions times the fixed right factor).
    let mut rel = Vec::with_capacity(n);
    let mut jac = Vec::with_capacity(n);
    for i in 0..n {
        let p = quat_conjugate(&unit_quat(&prev.rotations[i]));
        let qh = unit_quat(&curr.rotations[i]);
        rel.push(quat_mul(&qh, &p));
        let mut m = nalgebra::Matrix4::zeros();
        for k in 0..4 {
            let mut e = Vector4::zeros();
            e[k] = 1.0;
            m.set_column(k, &quat_mul(&e, &p));
        }
        jac.push(m);
    }
    let mut sum = 0.0;
    for i in 0..n {
        for (e, &j) in graph.neighbors[i].iter().enumerate() {
            let j = j as usize;
            let w = graph.weights[i][e];
            let diff = rel[j] - rel[i];
            let norm = diff.norm();
            sum += w * norm * inv;
            if norm < 1e-15 {
                continue;
            }
            let g = diff * (w * inv / norm);
            let gj = jac[j].transpose() * g;
            let gi = jac[i].transpose() * (-g);
            grads.rotations[j] += normalize_backward(&curr.rotations[j], &gj);
            grads.rotations[i] += normalize_backward(&curr.rotations[i], &gi);
        }
    }
    Ok((sum, grads))
}

/// Isometry penalty: neighbor distances should match their frame-0 lengths.
/// (1/(k·N))·Σ w·|base_dist − ‖Δμ_curr‖|; gradients go to current positions.
pub fn iso_loss(
    frame0: &GaussianCloud,
    curr: &GaussianCloud,
    graph: &RegularizationGraph,
) -> Result<(f64, CloudGradients)> {
    check_graph_shapes(frame0, curr, graph)?;
    let mut grads = CloudGradients::zeros(curr);
    let n = graph.len();
    let inv = 1.0 / (graph.k as f64 * n as f64);
    let mut sum = 0.0;
    for i in 0..n {
        for (e, &j) in graph.neighbors[i].iter().enumerate() {
            let j = j as usize;
            let w = graph.weights[i][e];
            let base = graph.base_distances[i][e];
            let d = curr.positions[j] - curr.positions[i];
            let len = d.norm();
            sum += w * (base - len).abs() * inv;
            if len < 1e-15 {
                continue;
            }
            let g = d * (w * inv * sign(len - base) / len);
            grads.positions[j] += g;
            grads.positions[i] -= g;
        }
    }
    Ok((sum, grads))
}

/// Mean absolute error between the rendered hallucination map and the
/// inverted tool mask over every pixel: the target is 1 where a tool occludes
/// the surface and 0 where tissue is observed.
pub fn hallucination_l1(
    rendered: &ScalarImage,
    tool_mask: &MaskImage,
) -> Result<(f64, ScalarImage)> {
    if rendered.width != tool_mask.width || rendered.height != tool_mask.height {
        return Err(SplatError::ShapeMismatch("hallucination_l1 inputs must share shape".into()));
    }
    let count = rendered.data.len() as f64;
    let mut grad = ScalarImage::new(rendered.width, rendered.height);
    let mut sum = 0.0;
    for i in 0..rendered.data.len() {
        let target = if tool_mask.data[i] == 0 { 1.0 } else { 0.0 };
        let d = rendered.data[i] - target;
        sum += d.abs();
        grad.data[i] = sign(d) / count;
    }
    Ok((sum / count, grad))
}

/// Inputs the pixel-space losses need from one rendered frame.
pub struct FrameSupervision<'a> {
    pub image: &'a ColorImage,
    pub depth: &'a ScalarImage,
    pub tool_mask: &'a MaskImage,
    pub source_flags: &'a [SourceFlag],
}

fn pixel_terms(
    out: &RenderOutput,
    sup: &FrameSupervision,
    weights: &LossWeights,
) -> Result<(LossBreakdown, OutputGrads)> {
    let (img, g_img) = image_l1(&out.color, sup.image, sup.tool_mask)?;
    let (dep, g_dep, g_alpha) = depth_l1(
        &out.depth,
        &out.alpha,
        sup.depth,
        sup.tool_mask,
        sup.source_flags,
        weights.w_filled,
    )?;
    let (smooth, g_smooth) = if weights.smoothness > 0.0 {
        depth_smoothness_huber(&out.depth, sup.tool_mask, weights.huber_delta)?
    } else {
        (0.0, ScalarImage::new(out.depth.width, out.depth.height))
    };
    let (halluc, g_halluc) = hallucination_l1(&out.hallucination, sup.tool_mask)?;

    let mut seeds = OutputGrads::zeros(out.color.width, out.color.height);
    for i in 0..seeds.color.data.len() {
        for c in 0..3 {
            seeds.color.data[i][c] = weights.image * g_img.data[i][c];
        }
        seeds.depth.data[i] = weights.depth * g_dep.data[i] + weights.smoothness * g_smooth.data[i];
        seeds.alpha.data[i] = weights.depth * g_alpha.data[i];
        seeds.hallucination.data[i] = weights.hallucination * g_halluc.data[i];
    }
    let breakdown = LossBreakdown {
        total: weights.image * img
            + weights.depth * dep
            + weights.smoothness * smooth
            + weights.hallucination * halluc,
        image: img,
        depth: dep,
        smoothness: smooth,
        hallucination: halluc,
        ..Default::default()
    };
    Ok((breakdown, seeds))
}

/// First-frame objective: photometric + depth supervision, plus the optional
/// smoothness and hallucination terms. Returns the per-term breakdown and the
/// weighted gradient seeds for the rasterizer backward pass.
pub fn total_loss_first_frame(
    out: &RenderOutput,
    sup: &FrameSupervision,
    weights: &LossWeights,
) -> Result<(LossBreakdown, OutputGrads)> {
    pixel_terms(out, sup, weights)
}

/// Per-frame tracking objective: the first-frame terms plus the rigidity,
/// rotation-coherence, and isometry regularizers over the neighbor graph.
/// The returned cloud gradients carry the (already weighted) physics terms;
/// the pixel terms arrive through the seed images as in the first frame.
pub fn total_loss_subsequent(
    out: &RenderOutput,
    sup: &FrameSupervision,
    prev: &GaussianCloud,
    curr: &GaussianCloud,
    frame0: &GaussianCloud,
    graph: &RegularizationGraph,
    weights: &LossWeights,
) -> Result<(LossBreakdown, OutputGrads, CloudGradients)> {
    let (mut breakdown, seeds) = pixel_terms(out, sup, weights)?;
    let (rigid, g_rigid) = rigid_loss(prev, curr, graph)?;
    let (rot, g_rot) = rot_loss(prev, curr, graph)?;
    let (iso, g_iso) = iso_loss(frame0, curr, graph)?;
    let mut grads = CloudGradients::zeros(curr);
    grads.add_scaled(&g_rigid, weights.rigid);
    grads.add_scaled(&g_rot, weights.rotation);
    grads.add_scaled(&g_iso, weights.isometry);
    breakdown.rigid = rigid;
    breakdown.rotation = rot;
    breakdown.isometry = iso;
    breakdown.total +=
        weights.rigid * rigid + weights.rotation * rot + weights.isometry * iso;
    Ok((breakdown, seeds, grads))
}
