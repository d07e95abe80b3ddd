//! EWA projection of 3D Gaussians to screen space.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::math;
use crate::model::{Camera, GaussianCloud};

use super::RenderOptions;

/// A Gaussian after projection to the image plane.
#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    pub mean2d: Vector2<f64>,
    /// 2D covariance in px², low-pass dilation included.
    pub cov2d: Matrix2<f64>,
    pub z_camera: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub hallucination: f64,
    /// Index of the source Gaussian in the cloud.
    pub source_index: usize,
}

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub gaussians: Vec<ProjectedGaussian>,
    /// Gaussians dropped by the near-clip test.
    pub culled: usize,
}

/// Projection with every intermediate the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct ProjDetail {
    pub cloud_index: usize,
    /// Camera-space mean.
    pub t: Vector3<f64>,
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub opacity: f64,
    pub hallucination: f64,
    pub color: [f64; 3],
    /// Channels clamped at zero by the SH evaluation.
    pub clamped: [bool; 3],
    /// Unit direction camera-center → mean, world frame.
    pub dir: Vector3<f64>,
    pub view_dist: f64,
    pub basis: Vec<f64>,
}

pub(crate) fn project_detailed(
    cloud: &GaussianCloud,
    camera: &Camera,
    opts: &RenderOptions,
) -> (Vec<ProjDetail>, usize) {
    let rot = camera.rotation();
    let trans = camera.translation();
    let center = camera.center_world();
    let degree = cloud.sh_degree;
    let n_sh = cloud.sh_per_gaussian();
    let mut out = Vec::with_capacity(cloud.len());
    let mut culled = 0usize;

    for i in 0..cloud.len() {
        let t = rot * cloud.positions[i] + trans;
        if t.z <= opts.near_clip {
            culled += 1;
            continue;
        }
        let mean2d = Vector2::new(
            camera.fx * t.x / t.z + camera.cx,
            camera.fy * t.y / t.z + camera.cy,
        );
        let sigma = crate::model::covariance_from_params(&cloud.rotations[i], &cloud.log_scales[i]);
        let m = rot * sigma * rot.transpose();
        let j = perspective_jacobian(camera, &t);
        let mut cov2d = j * m * j.transpose();
        cov2d[(0, 0)] += opts.dilation;
        cov2d[(1, 1)] += opts.dilation;

        // View-dependent color from SH.
        let v = cloud.positions[i] - center;
        let view_dist = v.norm();
        let dir = if view_dist > 0.0 { v / view_dist } else { Vector3::z() };
        let mut basis = vec![0.0; n_sh];
        math::sh_basis(degree, &dir, &mut basis);
        let coeffs = cloud.sh(i);
        let mut color = [0.0; 3];
        let mut clamped = [false; 3];
        for c in 0..3 {
            let mut acc = 0.0;
            for (k, b) in basis.iter().enumerate() {
                acc += coeffs[k][c] * b;
            }
            if acc < 0.0 {
                clamped[c] = true;
                acc = 0.0;
            }
            color[c] = acc;
        }

        out.push(ProjDetail {
            cloud_index: i,
            t,
            mean2d,
            cov2d,
            opacity: cloud.opacity(i),
            hallucination: cloud.hallucination(i),
            color,
            clamped,
            dir,
            view_dist,
            basis,
        });
    }
    (out, culled)
}

/// Jacobian of the perspective map at camera-space point `t`.
pub(crate) fn perspective_jacobian(camera: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    Matrix2x3::new(
        camera.fx * inv_z,
        0.0,
        -camera.fx * t.x * inv_z2,
        0.0,
        camera.fy * inv_z,
        -camera.fy * t.y * inv_z2,
    )
}

/// Projects every Gaussian in front of the near plane to screen space.
pub fn project(cloud: &GaussianCloud, camera: &Camera, opts: &RenderOptions) -> ProjectionResult {
    let (details, culled) = project_detailed(cloud, camera, opts);
    ProjectionResult {
        gaussians: details.into_iter().map(lean).collect(),
        culled,
    }
}

fn lean(d: ProjDetail) -> ProjectedGaussian {
    ProjectedGaussian {
        mean2d: d.mean2d,
        cov2d: d.cov2d,
        z_camera: d.t.z,
        color: d.color,
        opacity: d.opacity,
        hallucination: d.hallucination,
        source_index: d.cloud_index,
    }
}

/// Largest eigenvalue of a symmetric 2×2 matrix.
pub(crate) fn max_eigenvalue_2x2(m: &Matrix2<f64>) -> f64 {
    let mid = (m[(0, 0)] + m[(1, 1)]) * 0.5;
    let half_diff = (m[(0, 0)] - m[(1, 1)]) * 0.5;
    mid + (half_diff * half_diff + m[(0, 1)] * m[(0, 1)]).sqrt()
}

#[allow(dead_code)]
pub(crate) fn rotation_of(m: &Matrix3<f64>) -> Matrix3<f64> {
    *m
}
