//! Analytic backward pass through blending, the 2D Gaussian evaluation,
//! covariance projection, and the perspective map.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::buffer::{ColorImage, ScalarImage};
use crate::error::{Result, SplatError};
use crate::math::{self, Quat};
use crate::model::{covariance_from_params, Camera, GaussianCloud};

use super::forward::{conic_of, RenderOutput};
use super::project::{perspective_jacobian, project_detailed, ProjectedGaussian};
use super::{RenderOptions, ALPHA_CLAMP, TILE_SIZE};

/// Gradient seeds with respect to each rendered channel.
///
/// The scalar being differentiated is
/// `L = Σ_pixels (color·Ĉ + depth·D̂ + hallucination·Ĥ + alpha·A)`.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub color: ColorImage,
    pub depth: ScalarImage,
    pub hallucination: ScalarImage,
    pub alpha: ScalarImage,
}

impl OutputGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            color: ColorImage::new(width, height),
            depth: ScalarImage::new(width, height),
            hallucination: ScalarImage::new(width, height),
            alpha: ScalarImage::new(width, height),
        }
    }
}

/// Gradients with respect to every raw parameter array of a cloud.
#[derive(Debug, Clone)]
pub struct CloudGradients {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    pub sh_coeffs: Vec<[f64; 3]>,
    pub hallucination_logits: Vec<f64>,
}

impl CloudGradients {
    pub fn zeros(cloud: &GaussianCloud) -> Self {
        let n = cloud.len();
        Self {
            positions: vec![Vector3::zeros(); n],
            rotations: vec![Quat::zeros(); n],
            log_scales: vec![Vector3::zeros(); n],
            opacity_logits: vec![0.0; n],
            sh_coeffs: vec![[0.0; 3]; n * cloud.sh_per_gaussian()],
            hallucination_logits: vec![0.0; n],
        }
    }

    /// `self += other * scale`, elementwise.
    pub fn add_scaled(&mut self, other: &CloudGradients, scale: f64) {
        for (a, b) in self.positions.iter_mut().zip(&other.positions) {
            *a += b * scale;
        }
        for (a, b) in self.rotations.iter_mut().zip(&other.rotations) {
            *a += b * scale;
        }
        for (a, b) in self.log_scales.iter_mut().zip(&other.log_scales) {
            *a += b * scale;
        }
        for (a, b) in self.opacity_logits.iter_mut().zip(&other.opacity_logits) {
            *a += b * scale;
        }
        for (a, b) in self.sh_coeffs.iter_mut().zip(&other.sh_coeffs) {
            for c in 0..3 {
                a[c] += b[c] * scale;
            }
        }
        for (a, b) in self
            .hallucination_logits
            .iter_mut()
            .zip(&other.hallucination_logits)
        {
            *a += b * scale;
        }
    }

    pub fn non_finite_group(&self) -> Option<&'static str> {
        if !self.positions.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return Some("positions");
        }
        if !self.rotations.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return Some("rotations");
        }
        if !self.log_scales.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return Some("log_scales");
        }
        if !self.opacity_logits.iter().all(|x| x.is_finite()) {
            return Some("opacity");
        }
        if !self.sh_coeffs.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return Some("sh_coeffs");
        }
        if !self.hallucination_logits.iter().all(|x| x.is_finite()) {
            return Some("hallucination");
        }
        None
    }
}

/// Per-Gaussian screen-space gradient accumulator.
#[derive(Debug, Clone, Copy)]
struct Grad2D {
    mean: Vector2<f64>,
    cov: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
    z: f64,
    halluc: f64,
}

impl Default for Grad2D {
    fn default() -> Self {
        Self {
            mean: Vector2::zeros(),
            cov: Matrix2::zeros(),
            opacity: 0.0,
            color: [0.0; 3],
            z: 0.0,
            halluc: 0.0,
        }
    }
}

/// Gradients of the seeded scalar with respect to the cloud parameters.
///
/// `output` must come from rendering exactly this cloud and camera with the
/// same options. With `detach_hallucination_geometry` the hallucination
/// channel's seed reaches only the hallucination logits; the chain through
/// alpha (geometry, opacity) is cut for that channel.
pub fn render_backward(
    output: &RenderOutput,
    grads: &OutputGrads,
    cloud: &GaussianCloud,
    camera: &Camera,
    opts: &RenderOptions,
    detach_hallucination_geometry: bool,
) -> Result<CloudGradients> {
    let (w, h) = (camera.width, camera.height);
    if grads.color.width != w
        || grads.color.height != h
        || grads.depth.width != w
        || grads.depth.height != h
        || grads.hallucination.width != w
        || grads.hallucination.height != h
        || grads.alpha.width != w
        || grads.alpha.height != h
        || output.color.width != w
        || output.color.height != h
    {
        return Err(SplatError::ShapeMismatch(
            "gradient/output images must match camera dimensions".into(),
        ));
    }

    let (details, _culled) = project_detailed(cloud, camera, opts);
    let mut rank = vec![usize::MAX; cloud.len()];
    for (r, d) in details.iter().enumerate() {
        rank[d.cloud_index] = r;
    }
    let conics: Vec<Matrix2<f64>> = details
        .iter()
        .map(|d| {
            conic_of(&ProjectedGaussian {
                mean2d: d.mean2d,
                cov2d: d.cov2d,
                z_camera: d.t.z,
                color: d.color,
                opacity: d.opacity,
                hallucination: d.hallucination,
                source_index: d.cloud_index,
            })
            .map(|c| c.inv)
        })
        .collect::<Result<_>>()?;

    // Accumulate screen-space gradients per row band; bands are merged in
    // order so the result is independent of thread count.
    let bands: Vec<Vec<Grad2D>> = (0..h.div_ceil(TILE_SIZE))
        .into_par_iter()
        .map(|band| {
            let mut acc = vec![Grad2D::default(); details.len()];
            let y_lo = band * TILE_SIZE;
            let y_hi = (y_lo + TILE_SIZE).min(h);
            for y in y_lo..y_hi {
                for x in 0..w {
                    accumulate_pixel(
                        output,
                        grads,
                        &details,
                        &conics,
                        &rank,
                        opts,
                        detach_hallucination_geometry,
                        x,
                        y,
                        &mut acc,
                    );
                }
            }
            acc
        })
        .collect();
    let mut acc2d = vec![Grad2D::default(); details.len()];
    for band in bands {
        for (a, b) in acc2d.iter_mut().zip(band) {
            a.mean += b.mean;
            a.cov += b.cov;
            a.opacity += b.opacity;
            for c in 0..3 {
                a.color[c] += b.color[c];
            }
            a.z += b.z;
            a.halluc += b.halluc;
        }
    }

    // Chain each Gaussian's screen-space gradients back to raw parameters.
    let rot = camera.rotation();
    let n_sh = cloud.sh_per_gaussian();
    let partials: Vec<(usize, ParamGrad)> = details
        .par_iter()
        .zip(acc2d.par_iter())
        .map(|(d, g2)| (d.cloud_index, chain_to_params(cloud, camera, &rot, d, g2)))
        .collect();

    let mut out = CloudGradients::zeros(cloud);
    for (i, p) in partials {
        out.positions[i] = p.position;
        out.rotations[i] = p.rotation;
        out.log_scales[i] = p.log_scales;
        out.opacity_logits[i] = p.opacity_logit;
        out.hallucination_logits[i] = p.hallucination_logit;
        out.sh_coeffs[i * n_sh..(i + 1) * n_sh].copy_from_slice(&p.sh);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn accumulate_pixel(
    output: &RenderOutput,
    grads: &OutputGrads,
    details: &[super::ProjDetail],
    conics: &[Matrix2<f64>],
    rank: &[usize],
    opts: &RenderOptions,
    detach_halluc: bool,
    x: usize,
    y: usize,
    acc: &mut [Grad2D],
) {
    let w = output.color.width;
    let recs = &output.records[y * w + x];
    if recs.is_empty() {
        return;
    }
    let gc = grads.color.get(x, y);
    let gd = grads.depth.get(x, y);
    let gh = grads.hallucination.get(x, y);
    // The background composites as (1−A)·bg into color, folded into the
    // alpha-channel seed.
    let ga = grads.alpha.get(x, y)
        - (gc[0] * opts.background[0] + gc[1] * opts.background[1] + gc[2] * opts.background[2]);
    let gh_geom = if detach_halluc { 0.0 } else { gh };

    let px = x as f64;
    let py = y as f64;
    let mut after_g = 0.0;
    let mut suffix = 1.0;
    for rec in recs.iter().rev() {
        let det_idx = rank[rec.index as usize];
        let d = &details[det_idx];
        let alpha = rec.alpha;
        let t = rec.transmittance;
        let wgt = alpha * t;
        let g_i = gc[0] * d.color[0] + gc[1] * d.color[1] + gc[2] * d.color[2]
            + gd * d.t.z
            + gh_geom * d.hallucination;
        let dl_dalpha = t * g_i - after_g / (1.0 - alpha) + ga * t * suffix;

        let a = &mut acc[det_idx];
        for c in 0..3 {
            a.color[c] += gc[c] * wgt;
        }
        a.z += gd * wgt;
        a.halluc += gh * wgt;

        after_g += wgt * g_i;
        suffix *= 1.0 - alpha;

        if alpha >= ALPHA_CLAMP {
            continue; // clamped: flat in alpha
        }
        let falloff = alpha / d.opacity; // exp(−q/2)
        a.opacity += dl_dalpha * falloff;
        let dl_dq = dl_dalpha * alpha * -0.5;
        let delta = Vector2::new(px - d.mean2d.x, py - d.mean2d.y);
        let pd = conics[det_idx] * delta;
        a.mean -= 2.0 * dl_dq * pd;
        a.cov -= dl_dq * pd * pd.transpose();
    }
}

struct ParamGrad {
    position: Vector3<f64>,
    rotation: Quat,
    log_scales: Vector3<f64>,
    opacity_logit: f64,
    hallucination_logit: f64,
    sh: Vec<[f64; 3]>,
}

fn chain_to_params(
    cloud: &GaussianCloud,
    camera: &Camera,
    rot: &Matrix3<f64>,
    d: &super::ProjDetail,
    g2: &Grad2D,
) -> ParamGrad {
    let i = d.cloud_index;
    let t = d.t;
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;

    let mut g_t = Vector3::zeros();
    g_t.z += g2.z;
    // mean2d = (fx·tx/tz + cx, fy·ty/tz + cy)
    g_t.x += g2.mean.x * camera.fx * inv_z;
    g_t.y += g2.mean.y * camera.fy * inv_z;
    g_t.z -= g2.mean.x * camera.fx * t.x * inv_z2 + g2.mean.y * camera.fy * t.y * inv_z2;

    // cov2d = J (V Σ Vᵀ) Jᵀ + κI
    let g2cov = (g2.cov + g2.cov.transpose()) * 0.5;
    let sigma = covariance_from_params(&cloud.rotations[i], &cloud.log_scales[i]);
    let m = rot * sigma * rot.transpose();
    let j = perspective_jacobian(camera, &t);
    let g_m = j.transpose() * g2cov * j;
    let g_sigma = rot.transpose() * g_m * rot;
    let g_j = 2.0 * g2cov * j * m;
    g_t.x -= g_j[(0, 2)] * camera.fx * inv_z2;
    g_t.y -= g_j[(1, 2)] * camera.fy * inv_z2;
    g_t.z += -g_j[(0, 0)] * camera.fx * inv_z2 - g_j[(1, 1)] * camera.fy * inv_z2
        + g_j[(0, 2)] * 2.0 * camera.fx * t.x * inv_z2 * inv_z
        + g_j[(1, 2)] * 2.0 * camera.fy * t.y * inv_z2 * inv_z;

    let mut position = rot.transpose() * g_t;

    // Σ = R diag(e^{2s}) Rᵀ
    let g_sigma_sym = (g_sigma + g_sigma.transpose()) * 0.5;
    let r = math::quat_to_rotation(&cloud.rotations[i]);
    let inner = r.transpose() * g_sigma_sym * r;
    let mut log_scales = Vector3::zeros();
    for k in 0..3 {
        log_scales[k] = 2.0 * (2.0 * cloud.log_scales[i][k]).exp() * inner[(k, k)];
    }
    let dmat = Matrix3::from_diagonal(&cloud.log_scales[i].map(|s| (2.0 * s).exp()));
    let g_r = 2.0 * g_sigma_sym * r * dmat;
    let rotation = math::rotation_backward(&cloud.rotations[i], &g_r);

    // Color: c = clamp(Σ f_k b_k, ≥0); clamped channels are flat.
    let n_sh = cloud.sh_per_gaussian();
    let coeffs = cloud.sh(i);
    let mut sh = vec![[0.0; 3]; n_sh];
    for k in 0..n_sh {
        for c in 0..3 {
            if !d.clamped[c] {
                sh[k][c] = g2.color[c] * d.basis[k];
            }
        }
    }
    if cloud.sh_degree > 0 && d.view_dist > 0.0 {
        let mut basis_grad = vec![Vector3::zeros(); n_sh];
        math::sh_basis_grad(cloud.sh_degree, &d.dir, &mut basis_grad);
        let mut g_dir = Vector3::zeros();
        for k in 0..n_sh {
            for c in 0..3 {
                if !d.clamped[c] {
                    g_dir += basis_grad[k] * (g2.color[c] * coeffs[k][c]);
                }
            }
        }
        // dir = v/‖v‖ with v = μ − camera center
        position += (g_dir - d.dir * d.dir.dot(&g_dir)) / d.view_dist;
    }

    let o = d.opacity;
    let hh = d.hallucination;
    ParamGrad {
        position,
        rotation,
        log_scales,
        opacity_logit: g2.opacity * o * (1.0 - o),
        hallucination_logit: g2.halluc * hh * (1.0 - hh),
        sh,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render_from_cloud;

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let cloud = crate::test_clouds::random_cloud(4, 11);
        let camera = Camera::identity_pose(40.0, 40.0, 8.0, 8.0, 16, 16);
        let opts = RenderOptions::default();
        let (out, _) = render_from_cloud(&cloud, &camera, &opts).unwrap();
        let seeds = OutputGrads::zeros(16, 16);
        let g = render_backward(&out, &seeds, &cloud, &camera, &opts, false).unwrap();
        assert!(g.positions.iter().all(|v| v.norm() == 0.0));
        assert!(g.opacity_logits.iter().all(|&x| x == 0.0));
        assert!(g.rotations.iter().all(|q| q.norm() == 0.0));
    }

    #[test]
    fn offscreen_gaussian_gets_exact_zero_gradient() {
        let mut cloud = crate::test_clouds::random_cloud(3, 5);
        // Push one Gaussian far outside the frustum (still in front).
        cloud.positions[1] = nalgebra::Vector3::new(50.0, 0.0, 2.0);
        let camera = Camera::identity_pose(40.0, 40.0, 8.0, 8.0, 16, 16);
        let opts = RenderOptions::default();
        let (out, _) = render_from_cloud(&cloud, &camera, &opts).unwrap();
        let mut seeds = OutputGrads::zeros(16, 16);
        for v in &mut seeds.color.data {
            *v = [1.0; 3];
        }
        for v in &mut seeds.depth.data {
            *v = 0.5;
        }
        let g = render_backward(&out, &seeds, &cloud, &camera, &opts, false).unwrap();
        assert_eq!(g.positions[1], nalgebra::Vector3::zeros());
        assert_eq!(g.opacity_logits[1], 0.0);
        assert_eq!(g.log_scales[1], nalgebra::Vector3::zeros());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cloud = crate::test_clouds::random_cloud(2, 3);
        let camera = Camera::identity_pose(40.0, 40.0, 8.0, 8.0, 16, 16);
        let opts = RenderOptions::default();
        let (out, _) = render_from_cloud(&cloud, &camera, &opts).unwrap();
        let seeds = OutputGrads::zeros(8, 8);
        assert!(render_backward(&out, &seeds, &cloud, &camera, &opts, false).is_err());
    }
}
