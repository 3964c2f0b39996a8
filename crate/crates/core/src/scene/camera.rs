use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Per-frame color correction `C' = A C + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Exposure {
    pub a: Matrix3<f64>,
    pub b: Vector3<f64>,
}

impl Default for Exposure {
    fn default() -> Self {
        Self::identity()
    }
}

impl Exposure {
    pub fn identity() -> Self {
        Self { a: Matrix3::identity(), b: Vector3::zeros() }
    }

    pub fn apply(&self, c: &Vector3<f64>) -> Vector3<f64> {
        self.a * c + self.b
    }

    /// Linear interpolation between two exposures (used for held-out frames).
    pub fn lerp(&self, other: &Exposure, w: f64) -> Exposure {
        Exposure { a: self.a * (1.0 - w) + other.a * w, b: self.b * (1.0 - w) + other.b * w }
    }
}

/// A pinhole camera for one frame: intrinsics `K`, world-to-camera pose, and
/// the frame's exposure affine.
///
/// Camera space looks down `+z`; pixel `(i, j)` covers `[i, i+1) x [j, j+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameCamera {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub timestamp: f64,
    pub exposure: Exposure,
}

impl FrameCamera {
    pub fn new(
        width: usize,
        height: usize,
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        timestamp: f64,
    ) -> Self {
        Self { width, height, intrinsics, rotation, translation, timestamp, exposure: Exposure::identity() }
    }

    /// Simple pinhole intrinsics without skew.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
        Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
    }

    /// Camera at `eye` looking at `target`, with `up` giving the image's
    /// upward direction (camera `-y`).
    pub fn look_at(
        width: usize,
        height: usize,
        intrinsics: Matrix3<f64>,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        timestamp: f64,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        // Rows of the world-to-camera rotation are the camera axes in world coordinates.
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(width, height, intrinsics, rotation, translation, timestamp)
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.intrinsics[(1, 1)]
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Perspective projection of a camera-space point to pixel coordinates.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let k = &self.intrinsics;
        let inv_z = 1.0 / p.z;
        Vector2::new((k[(0, 0)] * p.x + k[(0, 1)] * p.y) * inv_z + k[(0, 2)], k[(1, 1)] * p.y * inv_z + k[(1, 2)])
    }

    /// Jacobian of [`Self::project_camera_point`] at `p`.
    pub fn projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let k = &self.intrinsics;
        let (fx, s, fy) = (k[(0, 0)], k[(0, 1)], k[(1, 1)]);
        let inv_z = 1.0 / p.z;
        let inv_z2 = inv_z * inv_z;
        Matrix2x3::new(fx * inv_z, s * inv_z, -(fx * p.x + s * p.y) * inv_z2, 0.0, fy * inv_z, -fy * p.y * inv_z2)
    }

    /// Checks the intrinsics and rotation invariants.
    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::Invalid("intrinsics must be upper-triangular".into()));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::Invalid("focal lengths must be positive".into()));
        }
        if (k[(2, 2)] - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid("intrinsics must have K[2,2] = 1".into()));
        }
        let r = &self.rotation;
        let ortho = (r * r.transpose() - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid("camera rotation must be orthonormal with det +1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("image size must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn look_at_is_valid_and_centers_target() {
        let k = FrameCamera::pinhole(100.0, 100.0, 32.0, 24.0);
        let cam = FrameCamera::look_at(
            64,
            48,
            k,
            Vector3::new(1.0, 2.0, 1.5),
            Vector3::new(10.0, 2.0, 1.0),
            Vector3::z(),
            0.0,
        );
        cam.validate().unwrap();
        let p = cam.world_to_camera(&Vector3::new(10.0, 2.0, 1.0));
        let uv = cam.project_camera_point(&p);
        assert_relative_eq!(uv, Vector2::new(32.0, 24.0), epsilon = 1e-9);
        assert_relative_eq!(cam.center(), Vector3::new(1.0, 2.0, 1.5), epsilon = 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut k = FrameCamera::pinhole(120.0, 110.0, 30.0, 20.0);
        k[(0, 1)] = 3.0;
        let cam = FrameCamera::new(64, 48, k, Matrix3::identity(), Vector3::zeros(), 0.0);
        let p = Vector3::new(0.3, -0.7, 4.0);
        let j = cam.projection_jacobian(&p);
        let h = 1e-6;
        for c in 0..3 {
            let mut dp = Vector3::zeros();
            dp[c] = h;
            let fd = (cam.project_camera_point(&(p + dp)) - cam.project_camera_point(&(p - dp))) / (2.0 * h);
            assert_relative_eq!(fd[0], j[(0, c)], epsilon = 1e-6);
            assert_relative_eq!(fd[1], j[(1, c)], epsilon = 1e-6);
        }
    }

    #[test]
    fn rejects_bad_rotation() {
        let k = FrameCamera::pinhole(1.0, 1.0, 0.0, 0.0);
        let cam = FrameCamera::new(4, 4, k, Matrix3::identity() * 2.0, Vector3::zeros(), 0.0);
        assert!(cam.validate().is_err());
        let mut k2 = k;
        k2[(1, 0)] = 0.5;
        let cam = FrameCamera::new(4, 4, k2, Matrix3::identity(), Vector3::zeros(), 0.0);
        assert!(cam.validate().is_err());
    }
}
