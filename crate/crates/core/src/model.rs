//! Core scene representation: Gaussian clouds, cameras, frame observations.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::buffer::{ColorImage, MaskImage, ScalarImage};
use crate::error::{Result, SplatError};
use crate::math::{self, Quat};

/// Provenance of a depth value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFlag {
    /// Ground-truth sensor depth.
    GtDepth,
    /// Depth filled from disparity via the fitted baseline.
    FilledDepth,
    /// No usable depth.
    Invalid,
}

/// The optimizable state for one frame: N anisotropic Gaussians.
///
/// Quaternions are scalar-first `(w, x, y, z)`. Scales are stored as
/// logarithms, opacity and hallucination as logits. SH coefficients are laid
/// out flat with `sh_coeff_count(sh_degree)` RGB triples per Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    pub sh_coeffs: Vec<[f64; 3]>,
    pub hallucination_logits: Vec<f64>,
    pub sh_degree: usize,
    pub time: f64,
}

impl GaussianCloud {
    pub fn empty(sh_degree: usize) -> Self {
        Self {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh_coeffs: Vec::new(),
            hallucination_logits: Vec::new(),
            sh_degree,
            time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sh_per_gaussian(&self) -> usize {
        math::sh_coeff_count(self.sh_degree)
    }

    /// SH coefficient triples of Gaussian `i`.
    pub fn sh(&self, i: usize) -> &[[f64; 3]] {
        let n = self.sh_per_gaussian();
        &self.sh_coeffs[i * n..(i + 1) * n]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        math::sigmoid(self.opacity_logits[i])
    }

    pub fn hallucination(&self, i: usize) -> f64 {
        math::sigmoid(self.hallucination_logits[i])
    }

    /// Checks the shared-length and quaternion-normalization invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(SplatError::EmptyInitialization);
        }
        let sh = self.sh_per_gaussian();
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.hallucination_logits.len() != n
            || self.sh_coeffs.len() != n * sh
        {
            return Err(SplatError::ShapeMismatch(format!(
                "cloud arrays disagree: N={n}, rotations={}, scales={}, opacities={}, halluc={}, sh={} (expect {})",
                self.rotations.len(),
                self.log_scales.len(),
                self.opacity_logits.len(),
                self.hallucination_logits.len(),
                self.sh_coeffs.len(),
                n * sh,
            )));
        }
        for (i, q) in self.rotations.iter().enumerate() {
            if (q.norm() - 1.0).abs() > 1e-6 {
                return Err(SplatError::ShapeMismatch(format!(
                    "quaternion {i} is not normalized: |q| = {}",
                    q.norm()
                )));
            }
        }
        Ok(())
    }

    /// Renormalizes every quaternion in place.
    pub fn renormalize_rotations(&mut self) {
        for q in &mut self.rotations {
            *q = math::quat_normalize(q);
        }
    }

    /// 3D covariance Σ = R S Sᵀ Rᵀ of Gaussian `index`.
    pub fn covariance(&self, index: usize) -> Result<Matrix3<f64>> {
        if index >= self.len() {
            return Err(SplatError::IndexOutOfRange {
                index,
                len: self.len(),
            });
        }
        Ok(covariance_from_params(
            &self.rotations[index],
            &self.log_scales[index],
        ))
    }

    /// Retains only the Gaussians at `keep` indices (ascending).
    pub fn retain_indices(&mut self, keep: &[usize]) {
        let sh = self.sh_per_gaussian();
        let take =
            |v: &Vec<Vector3<f64>>| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        self.positions = take(&self.positions);
        self.log_scales = take(&self.log_scales);
        self.rotations = keep.iter().map(|&i| self.rotations[i]).collect();
        self.opacity_logits = keep.iter().map(|&i| self.opacity_logits[i]).collect();
        self.hallucination_logits = keep
            .iter()
            .map(|&i| self.hallucination_logits[i])
            .collect();
        let mut coeffs = Vec::with_capacity(keep.len() * sh);
        for &i in keep {
            coeffs.extend_from_slice(&self.sh_coeffs[i * sh..(i + 1) * sh]);
        }
        self.sh_coeffs = coeffs;
    }
}

pub fn covariance_from_params(q: &Quat, log_scales: &Vector3<f64>) -> Matrix3<f64> {
    let r = math::quat_to_rotation(q);
    let d = Matrix3::from_diagonal(&log_scales.map(|s| (2.0 * s).exp()));
    let sigma = r * d * r.transpose();
    // Symmetrize away rounding skew.
    (sigma + sigma.transpose()) * 0.5
}

/// Normalized 3D Gaussian density (Eq. used only as a test oracle; rendering
/// uses the unnormalized 2D form).
pub fn evaluate_gaussian_3d(
    mu: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    x: &Vector3<f64>,
) -> Result<f64> {
    let chol = sigma.cholesky().ok_or_else(|| SplatError::DegenerateCovariance {
        index: 0,
        detail: "covariance is not positive definite".into(),
    })?;
    let det = chol.determinant();
    let diff = x - mu;
    let solved = chol.solve(&diff);
    let quad = diff.dot(&solved);
    let norm = (2.0 * std::f64::consts::PI).powf(1.5) * det.sqrt();
    Ok((-0.5 * quad).exp() / norm)
}

/// Pinhole camera: pixel intrinsics plus a rigid world-to-camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: Matrix4<f64>,
    pub projection: Matrix4<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        world_to_camera: Matrix4<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(SplatError::Config(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        let r = world_to_camera.fixed_view::<3, 3>(0, 0).into_owned();
        let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
        if orth > 1e-9 {
            return Err(SplatError::Config(format!(
                "world_to_camera rotation block is not orthonormal (residual {orth:.2e})"
            )));
        }
        let bottom = world_to_camera.row(3);
        if (bottom[0], bottom[1], bottom[2], bottom[3]) != (0.0, 0.0, 0.0, 1.0) {
            return Err(SplatError::Config(
                "world_to_camera last row must be (0,0,0,1)".into(),
            ));
        }
        let intrinsic = Matrix4::new(
            fx, 0.0, cx, 0.0, //
            0.0, fy, cy, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let projection = intrinsic * world_to_camera;
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            world_to_camera,
            projection,
            width,
            height,
        })
    }

    pub fn identity_pose(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self::new(fx, fy, cx, cy, Matrix4::identity(), width, height).expect("valid intrinsics")
    }

    /// Rotation block of the world-to-camera transform.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center expressed in world coordinates.
    pub fn center_world(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn world_to_camera_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn camera_to_world_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * (p - self.translation())
    }

    /// Projects a world point; returns (pixel x, pixel y, camera depth).
    pub fn project_point(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        let h = self.projection * Vector4::new(p.x, p.y, p.z, 1.0);
        (h.x / h.z, h.y / h.z, h.z)
    }
}

/// One frame of the input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub image: ColorImage,
    pub depth: ScalarImage,
    pub depth_valid: MaskImage,
    pub tool_mask: MaskImage,
    pub disparity: Option<ScalarImage>,
    pub source_flags: Vec<SourceFlag>,
    pub time: f64,
}

impl FrameObservation {
    /// Builds an observation; source flags start as GT where depth is valid.
    pub fn new(
        image: ColorImage,
        depth: ScalarImage,
        depth_valid: MaskImage,
        tool_mask: MaskImage,
        disparity: Option<ScalarImage>,
        time: f64,
    ) -> Result<Self> {
        let (w, h) = (image.width, image.height);
        let shape_ok = depth.width == w
            && depth.height == h
            && depth_valid.width == w
            && depth_valid.height == h
            && tool_mask.width == w
            && tool_mask.height == h
            && disparity.as_ref().map_or(true, |d| d.width == w && d.height == h);
        if !shape_ok {
            return Err(SplatError::ShapeMismatch(
                "frame images must all share the color image's dimensions".into(),
            ));
        }
        let source_flags = depth_valid
            .data
            .iter()
            .map(|&v| if v != 0 { SourceFlag::GtDepth } else { SourceFlag::Invalid })
            .collect();
        Ok(Self {
            image,
            depth,
            depth_valid,
            tool_mask,
            disparity,
            source_flags,
            time,
        })
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{logit, quat_from_axis_angle, quat_identity};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub fn small_cloud(n: usize, seed: u64) -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = GaussianCloud::empty(0);
        for _ in 0..n {
            cloud.positions.push(Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(1.5..2.5),
            ));
            let axis = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            cloud
                .rotations
                .push(quat_from_axis_angle(&axis, rng.gen_range(0.0..3.0)));
            cloud.log_scales.push(Vector3::new(
                rng.gen_range(-3.0..-1.0),
                rng.gen_range(-3.0..-1.0),
                rng.gen_range(-3.0..-1.0),
            ));
            cloud.opacity_logits.push(logit(rng.gen_range(0.2..0.8)));
            cloud.hallucination_logits.push(logit(rng.gen_range(0.2..0.8)));
            cloud.sh_coeffs.push([
                rng.gen_range(0.5..2.5),
                rng.gen_range(0.5..2.5),
                rng.gen_range(0.5..2.5),
            ]);
        }
        cloud
    }

    #[test]
    fn covariance_identity_case() {
        let mut c = GaussianCloud::empty(0);
        c.positions.push(Vector3::zeros());
        c.rotations.push(quat_identity());
        c.log_scales.push(Vector3::zeros());
        c.opacity_logits.push(0.0);
        c.hallucination_logits.push(0.0);
        c.sh_coeffs.push([0.5; 3]);
        let sigma = c.covariance(0).unwrap();
        assert_relative_eq!(sigma, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn covariance_scaled_axis() {
        let q = quat_identity();
        let sigma = covariance_from_params(&q, &Vector3::new(2.0_f64.ln(), 0.0, 0.0));
        assert_relative_eq!(
            sigma,
            Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn covariance_rotated_axis() {
        // 90° about z moves the stretched x-axis onto y.
        let q = quat_from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let sigma = covariance_from_params(&q, &Vector3::new(2.0_f64.ln(), 0.0, 0.0));
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0));
        assert_relative_eq!(sigma, expected, epsilon = 1e-12);
        // Brute-force R S Sᵀ Rᵀ product as an independent route.
        let r = crate::math::quat_to_rotation(&q);
        let s = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        let brute = r * s * s.transpose() * r.transpose();
        assert_relative_eq!(sigma, brute, epsilon = 1e-12);
    }

    #[test]
    fn covariance_index_out_of_range() {
        let c = small_cloud(2, 1);
        assert!(matches!(
            c.covariance(2),
            Err(SplatError::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn covariance_sign_flip_invariant() {
        let c = small_cloud(8, 2);
        for i in 0..c.len() {
            let flipped = covariance_from_params(&(-c.rotations[i]), &c.log_scales[i]);
            assert_eq!(c.covariance(i).unwrap(), flipped);
        }
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let c = small_cloud(6, 3);
        for i in 0..c.len() {
            let sigma = c.covariance(i).unwrap();
            let mut eig: Vec<f64> = sigma.symmetric_eigenvalues().iter().copied().collect();
            let mut expect: Vec<f64> =
                c.log_scales[i].iter().map(|s| (2.0 * s).exp()).collect();
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (e, x) in eig.iter().zip(&expect) {
                assert_relative_eq!(e, x, epsilon = 1e-9);
            }
            assert!(eig[0] > 0.0);
        }
    }

    #[test]
    fn gaussian_3d_peak_value() {
        let mu = Vector3::zeros();
        let v = evaluate_gaussian_3d(&mu, &Matrix3::identity(), &mu).unwrap();
        assert_relative_eq!(v, (2.0 * std::f64::consts::PI).powf(-1.5), epsilon = 1e-12);
        // Determinant scaling: Σ = 4I halves each axis contribution.
        let v4 = evaluate_gaussian_3d(&mu, &(Matrix3::identity() * 4.0), &mu).unwrap();
        assert_relative_eq!(v4, v / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_3d_tail_vanishes() {
        let mu = Vector3::zeros();
        let x = Vector3::new(10.0, 0.0, 0.0);
        let v = evaluate_gaussian_3d(&mu, &Matrix3::identity(), &x).unwrap();
        assert!(v < 1e-20);
    }

    #[test]
    fn gaussian_3d_singular_covariance_errors() {
        let mu = Vector3::zeros();
        let sigma = Matrix3::zeros();
        assert!(evaluate_gaussian_3d(&mu, &sigma, &mu).is_err());
    }

    #[test]
    fn gaussian_3d_integrates_to_one_monte_carlo() {
        // Importance-free box estimate over [-6, 6]^3 for a random SPD Σ.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Matrix3::from_fn(|_, _| rng.gen_range(-0.6..0.6));
        let sigma = a * a.transpose() + Matrix3::identity() * 0.3;
        let mu = Vector3::new(0.1, -0.2, 0.05);
        let n = 1_000_000;
        let side = 12.0;
        let vol = side * side * side;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = Vector3::new(
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
            );
            acc += evaluate_gaussian_3d(&mu, &sigma, &x).unwrap();
        }
        let est = acc / n as f64 * vol;
        assert!((est - 1.0).abs() < 0.01, "MC integral {est}");
    }

    #[test]
    fn camera_projection_consistent_with_parts() {
        let w2c = Matrix4::new(
            0.0, -1.0, 0.0, 0.2, //
            1.0, 0.0, 0.0, -0.1, //
            0.0, 0.0, 1.0, 0.5, //
            0.0, 0.0, 0.0, 1.0,
        );
        let cam = Camera::new(120.0, 110.0, 32.0, 24.0, w2c, 64, 48).unwrap();
        let p = Vector3::new(0.3, 0.2, 1.7);
        let t = cam.world_to_camera_point(&p);
        let (px, py, z) = cam.project_point(&p);
        assert_relative_eq!(px, cam.fx * t.x / t.z + cam.cx, epsilon = 1e-9);
        assert_relative_eq!(py, cam.fy * t.y / t.z + cam.cy, epsilon = 1e-9);
        assert_relative_eq!(z, t.z, epsilon = 1e-12);
        assert_relative_eq!(cam.camera_to_world_point(&t), p, epsilon = 1e-12);
    }

    #[test]
    fn camera_rejects_bad_inputs() {
        assert!(Camera::new(-1.0, 1.0, 0.0, 0.0, Matrix4::identity(), 8, 8).is_err());
        let mut skew = Matrix4::identity();
        skew[(0, 1)] = 0.1;
        assert!(Camera::new(10.0, 10.0, 4.0, 4.0, skew, 8, 8).is_err());
    }
}
