//! Evaluation metrics: masked PSNR, single-scale SSIM, alpha-normalized depth
//! error, hallucination-map IoU, and forward-render throughput.

use serde::Serialize;

use crate::buffer::{ColorImage, MaskImage, ScalarImage};
use crate::error::{Result, SplatError};
use crate::model::{Camera, GaussianCloud};
use crate::render::{render_from_cloud, RenderOptions};

/// Reported instead of +∞ when the images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

/// 10·log10(1/MSE) over masked pixels (all channels); values in [0,1].
pub fn psnr(a: &ColorImage, b: &ColorImage, mask: &MaskImage) -> Result<f64> {
    if !a.same_shape(b) || a.width != mask.width || a.height != mask.height {
        return Err(SplatError::ShapeMismatch("psnr inputs must share shape".into()));
    }
    let masked = mask.count_set();
    if masked == 0 {
        return Err(SplatError::EmptySupervision);
    }
    let mut sum = 0.0;
    for i in 0..a.data.len() {
        if mask.data[i] == 0 {
            continue;
        }
        for c in 0..3 {
            let d = a.data[i][c] - b.data[i][c];
            sum += d * d;
        }
    }
    let mse = sum / (3 * masked) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = x as f64 - c;
            let dy = y as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), computed per
/// channel and averaged; only windows whose every pixel is masked contribute.
pub fn ssim(a: &ColorImage, b: &ColorImage, mask: &MaskImage) -> Result<f64> {
    if !a.same_shape(b) || a.width != mask.width || a.height != mask.height {
        return Err(SplatError::ShapeMismatch("ssim inputs must share shape".into()));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(SplatError::Config(format!(
            "ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {}×{}",
            a.width, a.height
        )));
    }
    let win = gaussian_window();
    let half = SSIM_WINDOW / 2;
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut windows = 0usize;
    for cy in half..a.height - half {
        'next: for cx in half..a.width - half {
            // the window must be fully masked
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    if !mask.get(cx + wx - half, cy + wy - half) {
                        continue 'next;
                    }
                }
            }
            for ch in 0..3 {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for wy in 0..SSIM_WINDOW {
                    for wx in 0..SSIM_WINDOW {
                        let w = win[wy * SSIM_WINDOW + wx];
                        let va = a.get(cx + wx - half, cy + wy - half)[ch];
                        let vb = b.get(cx + wx - half, cy + wy - half)[ch];
                        mu_a += w * va;
                        mu_b += w * vb;
                        aa += w * va * va;
                        bb += w * vb * vb;
                        ab += w * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += s;
            }
            windows += 1;
        }
    }
    if windows == 0 {
        return Err(SplatError::EmptySupervision);
    }
    Ok(total / (3 * windows) as f64)
}

/// MAE and RMSE of D̂/A against ground truth over pixels with mask = 1 and
/// coverage A ≥ 0.5.
pub fn depth_error(
    rendered_depth: &ScalarImage,
    rendered_alpha: &ScalarImage,
    gt_depth: &ScalarImage,
    mask: &MaskImage,
) -> Result<(f64, f64)> {
    if !rendered_depth.same_shape(rendered_alpha)
        || !rendered_depth.same_shape(gt_depth)
        || rendered_depth.width != mask.width
        || rendered_depth.height != mask.height
    {
        return Err(SplatError::ShapeMismatch("depth_error inputs must share shape".into()));
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for i in 0..rendered_depth.data.len() {
        if mask.data[i] == 0 || rendered_alpha.data[i] < 0.5 {
            continue;
        }
        let e = rendered_depth.data[i] / rendered_alpha.data[i] - gt_depth.data[i];
        abs_sum += e.abs();
        sq_sum += e * e;
        count += 1;
    }
    if count == 0 {
        return Err(SplatError::EmptySupervision);
    }
    Ok((abs_sum / count as f64, (sq_sum / count as f64).sqrt()))
}

/// Intersection-over-union of {Ĥ ≥ threshold} against the ground-truth
/// occluded-region mask. Both empty → 1 (perfect vacuous agreement).
pub fn hallucination_iou(
    rendered: &ScalarImage,
    gt_occluded: &MaskImage,
    threshold: f64,
) -> Result<f64> {
    if rendered.width != gt_occluded.width || rendered.height != gt_occluded.height {
        return Err(SplatError::ShapeMismatch("hallucination_iou inputs must share shape".into()));
    }
    if !(0.0..1.0).contains(&threshold) || threshold == 0.0 {
        return Err(SplatError::Config(format!("IoU threshold must be in (0,1), got {threshold}")));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for i in 0..rendered.data.len() {
        let p = rendered.data[i] >= threshold;
        let g = gt_occluded.data[i] != 0;
        if p && g {
            inter += 1;
        }
        if p || g {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Mean forward-render throughput over `renders` repetitions, excluding I/O.
pub fn render_fps(
    cloud: &GaussianCloud,
    camera: &Camera,
    opts: &RenderOptions,
    renders: usize,
) -> Result<f64> {
    let n = renders.max(1);
    let start = std::time::Instant::now();
    for _ in 0..n {
        render_from_cloud(cloud, camera, opts)?;
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(n as f64 / secs.max(1e-12))
}

/// Per-frame metric row in an evaluation report.
#[derive(Debug, Clone, Serialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr_db: f64,
    /// None when no 11×11 window fits entirely inside the mask.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    pub mask_coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hallucination_iou: Option<f64>,
}

/// Whole-run evaluation summary. LPIPS is reserved but always null: it would
/// require pretrained network weights.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr_db: f64,
    pub mean_ssim: Option<f64>,
    pub mean_depth_mae: Option<f64>,
    pub mean_depth_rmse: Option<f64>,
    pub mean_hallucination_iou: Option<f64>,
    pub lpips: Option<f64>,
    pub render_fps: f64,
}

impl EvalReport {
    pub fn from_frames(frames: Vec<FrameMetrics>, fps: f64) -> Self {
        let n = frames.len().max(1) as f64;
        let mean = |f: &dyn Fn(&FrameMetrics) -> f64| frames.iter().map(f).sum::<f64>() / n;
        let mean_opt = |f: &dyn Fn(&FrameMetrics) -> Option<f64>| {
            let vals: Vec<f64> = frames.iter().filter_map(f).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        Self {
            mean_psnr_db: mean(&|m| m.psnr_db),
            mean_ssim: mean_opt(&|m| m.ssim),
            mean_depth_mae: mean_opt(&|m| m.depth_mae),
            mean_depth_rmse: mean_opt(&|m| m.depth_rmse),
            mean_hallucination_iou: mean_opt(&|m| m.hallucination_iou),
            lpips: None,
            render_fps: fps,
            frames,
        }
    }

    /// Per-frame CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr_db,ssim,mask_coverage,depth_mae,depth_rmse,hallucination_iou\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for m in &self.frames {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                m.frame,
                m.psnr_db,
                opt(m.ssim),
                m.mask_coverage,
                opt(m.depth_mae),
                opt(m.depth_rmse),
                opt(m.hallucination_iou)
            ));
        }
        out
    }
}
