use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::sh;

/// Logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`] for `p` in (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic 3D Gaussian.
///
/// Opacity is stored as a pre-sigmoid logit and the axis scales in log space so
/// that every field can be optimized without constraints. Spherical-harmonic
/// coefficients are stored per basis function as RGB triples, so a degree-`D`
/// Gaussian carries `(D + 1)^2` triples.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub mu: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: Vec<[f64; 3]>,
    pub logits: Vec<f64>,
}

impl Gaussian3D {
    /// Isotropic Gaussian with a constant (degree-0) color.
    pub fn isotropic(mu: Vector3<f64>, scale: f64, opacity: f64, rgb: [f64; 3], logits: Vec<f64>) -> Self {
        Self {
            mu,
            rotation: UnitQuaternion::identity(),
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: logit(opacity),
            sh: vec![sh::dc_from_rgb(rgb)],
            logits,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.rotation)
    }

    pub fn sh_degree(&self) -> usize {
        sh::degree_for_len(self.sh.len())
    }

    pub fn class_count(&self) -> usize {
        self.logits.len()
    }

    /// Argmax over semantic logits (first index wins ties).
    pub fn label(&self) -> usize {
        argmax(&self.logits)
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Rotation matrix of a unit quaternion, written out so that the identity
/// quaternion maps to the exact identity matrix.
pub fn quat_to_matrix(q: &UnitQuaternion<f64>) -> Matrix3<f64> {
    let q = q.quaternion();
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
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

/// Unit quaternion from `[w, x, y, z]`. Input already unit to within
/// roundoff is kept bit-for-bit; anything else is normalized.
pub fn quat_from_wxyz(q: [f64; 4]) -> UnitQuaternion<f64> {
    let q = Quaternion::new(q[0], q[1], q[2], q[3]);
    if (q.norm() - 1.0).abs() <= 1e-12 {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::from_quaternion(q)
    }
}

/// Quaternion product `a * b` without renormalization.
pub(crate) fn quat_mul(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_unchecked(a.quaternion() * b.quaternion())
}

/// Applies the right perturbation `R <- R Exp(delta)` and renormalizes.
pub fn retract_rotation(q: &UnitQuaternion<f64>, delta: &Vector3<f64>) -> UnitQuaternion<f64> {
    let step = UnitQuaternion::from_scaled_axis(*delta);
    let out = q.quaternion() * step.quaternion();
    UnitQuaternion::from_quaternion(out)
}

/// Covariance `R S S^T R^T` of a Gaussian, symmetrized.
pub fn covariance_of(g: &Gaussian3D) -> Matrix3<f64> {
    let r = g.rotation_matrix();
    let d = Matrix3::from_diagonal(&g.log_scale.map(|s| (2.0 * s).exp()));
    let sigma = r * d * r.transpose();
    0.5 * (sigma + sigma.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian(rotation: UnitQuaternion<f64>, scale: [f64; 3]) -> Gaussian3D {
        Gaussian3D {
            mu: Vector3::zeros(),
            rotation,
            log_scale: Vector3::new(scale[0].ln(), scale[1].ln(), scale[2].ln()),
            opacity_logit: 0.0,
            sh: vec![[0.0; 3]],
            logits: vec![0.0, 0.0],
        }
    }

    #[test]
    fn identity_covariance() {
        let c = covariance_of(&gaussian(UnitQuaternion::identity(), [1.0, 1.0, 1.0]));
        assert_eq!(c, Matrix3::identity());
    }

    #[test]
    fn axis_scale_squares_on_diagonal() {
        let c = covariance_of(&gaussian(UnitQuaternion::identity(), [2.0, 1.0, 1.0]));
        assert_relative_eq!(c, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn yaw_swaps_axes() {
        let yaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let c = covariance_of(&gaussian(yaw, [2.0, 1.0, 1.0]));
        assert_relative_eq!(c, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn sigmoid_logit_roundtrip() {
        for p in [0.01, 0.3, 0.5, 0.9, 0.999] {
            assert_relative_eq!(sigmoid(logit(p)), p, epsilon = 1e-12);
        }
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn retraction_keeps_unit_norm() {
        let mut q = UnitQuaternion::identity();
        for k in 0..100 {
            let d = Vector3::new(0.1 * k as f64, -0.05, 0.3);
            q = retract_rotation(&q, &d);
            assert!((q.quaternion().norm() - 1.0).abs() < 1e-12);
        }
    }
}
