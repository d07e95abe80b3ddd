//! Seeded scene builders shared by unit, integration, and acceptance tests.

#![doc(hidden)]

use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::math::{logit, quat_from_axis_angle};
use crate::model::GaussianCloud;

/// A reproducible cloud of `n` Gaussians sitting roughly in front of a
/// 16×16 camera with f = 40 and principal point (8, 8).
pub fn random_cloud(n: usize, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = GaussianCloud::empty(0);
    for _ in 0..n {
        cloud.positions.push(Vector3::new(
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.15..0.15),
            rng.gen_range(1.5..2.5),
        ));
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        cloud
            .rotations
            .push(quat_from_axis_angle(&axis, rng.gen_range(0.1..3.0)));
        cloud.log_scales.push(Vector3::new(
            rng.gen_range(-2.8..-1.6),
            rng.gen_range(-2.8..-1.6),
            rng.gen_range(-2.8..-1.6),
        ));
        cloud.opacity_logits.push(logit(rng.gen_range(0.25..0.75)));
        cloud
            .hallucination_logits
            .push(logit(rng.gen_range(0.2..0.8)));
        cloud.sh_coeffs.push([
            rng.gen_range(0.8..2.4),
            rng.gen_range(0.8..2.4),
            rng.gen_range(0.8..2.4),
        ]);
    }
    cloud.time = 0.0;
    cloud
}

/// Same as [`random_cloud`] but with view-dependent color of the given
/// SH degree.
pub fn random_cloud_sh(n: usize, seed: u64, degree: usize) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let mut cloud = random_cloud(n, seed);
    let per = crate::math::sh_coeff_count(degree);
    cloud.sh_degree = degree;
    let mut coeffs = Vec::with_capacity(n * per);
    for i in 0..n {
        coeffs.push([
            cloud.sh_coeffs[i][0] * 2.0,
            cloud.sh_coeffs[i][1] * 2.0,
            cloud.sh_coeffs[i][2] * 2.0,
        ]);
        for _ in 1..per {
            coeffs.push([
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
            ]);
        }
    }
    cloud.sh_coeffs = coeffs;
    cloud
}
