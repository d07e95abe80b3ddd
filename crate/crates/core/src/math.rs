//! Shared numeric helpers: activations, quaternions, spherical harmonics.
//!
//! Quaternions are stored scalar-first `(w, x, y, z)` and normalized inside
//! every conversion, so all derivative helpers chain through the
//! normalization.

use nalgebra::{Matrix3, Vector3, Vector4};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// d sigmoid / dx expressed through the output value.
pub fn sigmoid_grad(s: f64) -> f64 {
    s * (1.0 - s)
}

pub type Quat = Vector4<f64>;

pub fn quat_identity() -> Quat {
    Vector4::new(1.0, 0.0, 0.0, 0.0)
}

pub fn quat_normalize(q: &Quat) -> Quat {
    q / q.norm()
}

/// Hamilton product a ⊗ b, scalar-first.
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    let (aw, ax, ay, az) = (a[0], a[1], a[2], a[3]);
    let (bw, bx, by, bz) = (b[0], b[1], b[2], b[3]);
    Vector4::new(
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )
}

/// Inverse of a unit quaternion (conjugate).
pub fn quat_conjugate(q: &Quat) -> Quat {
    Vector4::new(q[0], -q[1], -q[2], -q[3])
}

/// Axis-angle constructor; axis need not be normalized.
pub fn quat_from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Quat {
    let a = axis.normalize() * (angle / 2.0).sin();
    Vector4::new((angle / 2.0).cos(), a.x, a.y, a.z)
}

/// Rotation matrix of the *normalized* quaternion.
pub fn quat_to_rotation(q: &Quat) -> Matrix3<f64> {
    let n = quat_normalize(q);
    let (w, x, y, z) = (n[0], n[1], n[2], n[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// dR/dq̂ for each component of the unit quaternion, before the
/// normalization chain.
fn rotation_jacobian_unit(n: &Quat) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (n[0], n[1], n[2], n[3]);
    [
        2.0 * Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0),
        2.0 * Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x),
        2.0 * Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y),
        2.0 * Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0),
    ]
}

/// Pull a gradient w.r.t. the rotation matrix back to the raw (possibly
/// unnormalized) quaternion, including the normalization chain.
pub fn rotation_backward(q: &Quat, grad_r: &Matrix3<f64>) -> Quat {
    let norm = q.norm();
    let n = q / norm;
    let jac = rotation_jacobian_unit(&n);
    let mut grad_unit = Vector4::zeros();
    for k in 0..4 {
        grad_unit[k] = jac[k].component_mul(grad_r).sum();
    }
    // dq̂/dq = (I − q̂ q̂ᵀ) / ‖q‖
    (grad_unit - n * n.dot(&grad_unit)) / norm
}

/// Pull a gradient w.r.t. the normalized quaternion back to the raw one.
pub fn normalize_backward(q: &Quat, grad_unit: &Quat) -> Quat {
    let norm = q.norm();
    let n = q / norm;
    (grad_unit - n * n.dot(grad_unit)) / norm
}

// Real spherical harmonics, 3D-GS constant convention.
const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Degree-0 basis value; a degree-0 coefficient of `rgb / SH_DC` renders as
/// plain `rgb`.
pub const SH_DC: f64 = SH_C0;

pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluates the SH basis at unit direction `d`, filling `out[..n]`.
pub fn sh_basis(degree: usize, d: &Vector3<f64>, out: &mut [f64]) {
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = SH_C0;
    if degree >= 1 {
        out[1] = -SH_C1 * y;
        out[2] = SH_C1 * z;
        out[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[4] = SH_C2[0] * x * y;
        out[5] = SH_C2[1] * y * z;
        out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        out[7] = SH_C2[3] * x * z;
        out[8] = SH_C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[9] = SH_C3[0] * y * (3.0 * xx - yy);
        out[10] = SH_C3[1] * x * y * z;
        out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        out[14] = SH_C3[5] * z * (xx - yy);
        out[15] = SH_C3[6] * x * (xx - yy * 3.0);
    }
}

/// d basis / d direction for each basis function, at unit direction `d`.
pub fn sh_basis_grad(degree: usize, d: &Vector3<f64>, out: &mut [Vector3<f64>]) {
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = Vector3::zeros();
    if degree >= 1 {
        out[1] = Vector3::new(0.0, -SH_C1, 0.0);
        out[2] = Vector3::new(0.0, 0.0, SH_C1);
        out[3] = Vector3::new(-SH_C1, 0.0, 0.0);
    }
    if degree >= 2 {
        out[4] = SH_C2[0] * Vector3::new(y, x, 0.0);
        out[5] = SH_C2[1] * Vector3::new(0.0, z, y);
        out[6] = SH_C2[2] * Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z);
        out[7] = SH_C2[3] * Vector3::new(z, 0.0, x);
        out[8] = SH_C2[4] * Vector3::new(2.0 * x, -2.0 * y, 0.0);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[9] = SH_C3[0] * Vector3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
        out[10] = SH_C3[1] * Vector3::new(y * z, x * z, x * y);
        out[11] = SH_C3[2] * Vector3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
        out[12] = SH_C3[3] * Vector3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
        out[13] = SH_C3[4] * Vector3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
        out[14] = SH_C3[5] * Vector3::new(2.0 * x * z, -2.0 * y * z, xx - yy);
        out[15] = SH_C3[6] * Vector3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
    }
}
