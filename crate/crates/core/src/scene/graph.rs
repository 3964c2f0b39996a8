use std::collections::HashSet;

use nalgebra::Vector3;

use super::gaussian::{quat_mul, Gaussian3D};
use super::track::{Pose, PoseJacobian, UnicycleTrack, DEFAULT_HORIZON};
use crate::error::{Error, Result};

/// A rigidly moving object: Gaussians in its canonical frame plus its track.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicObject {
    pub id: u32,
    pub canonical: Vec<Gaussian3D>,
    pub track: UnicycleTrack,
}

impl DynamicObject {
    /// Centroid of the canonical Gaussian centers.
    pub fn canonical_centroid(&self) -> Vector3<f64> {
        if self.canonical.is_empty() {
            return Vector3::zeros();
        }
        self.canonical.iter().map(|g| g.mu).sum::<Vector3<f64>>() / self.canonical.len() as f64
    }
}

/// Static world-frame Gaussians plus any number of dynamic objects.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub static_gaussians: Vec<Gaussian3D>,
    pub objects: Vec<DynamicObject>,
    pub class_count: usize,
    pub background: Vector3<f64>,
}

/// Where a world-frame Gaussian came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Static { index: usize },
    Object { object: usize, id: u32, index: usize },
}

impl Provenance {
    pub fn object(&self) -> Option<usize> {
        match self {
            Provenance::Static { .. } => None,
            Provenance::Object { object, .. } => Some(*object),
        }
    }
}

/// A Gaussian placed in the world at a particular timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldGaussian {
    pub gaussian: Gaussian3D,
    pub source: Provenance,
}

/// Object poses at one timestamp with their track Jacobians.
#[derive(Clone, Debug)]
pub struct ObjectPoses {
    pub timestamp: f64,
    pub poses: Vec<Pose>,
    pub jacobians: Vec<PoseJacobian>,
}

impl SceneGraph {
    pub fn new(class_count: usize, background: Vector3<f64>) -> Self {
        Self { static_gaussians: Vec::new(), objects: Vec::new(), class_count, background }
    }

    pub fn gaussian_count(&self) -> usize {
        self.static_gaussians.len() + self.objects.iter().map(|o| o.canonical.len()).sum::<usize>()
    }

    /// Checks id uniqueness, logit lengths, and every track.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(Error::Invalid(format!("duplicate object id {}", o.id)));
            }
            o.track.validate()?;
        }
        let all = self.static_gaussians.iter().chain(self.objects.iter().flat_map(|o| o.canonical.iter()));
        for g in all {
            if g.logits.len() != self.class_count {
                return Err(Error::Invalid(format!(
                    "gaussian has {} logits but class_count is {}",
                    g.logits.len(),
                    self.class_count
                )));
            }
            if crate::sh::degree_checked(g.sh.len()).is_none() {
                return Err(Error::Invalid(format!("sh length {} is not a square", g.sh.len())));
            }
        }
        Ok(())
    }

    /// Poses of every object at `t`.
    pub fn object_poses(&self, t: f64) -> Result<ObjectPoses> {
        let mut poses = Vec::with_capacity(self.objects.len());
        let mut jacobians = Vec::with_capacity(self.objects.len());
        for o in &self.objects {
            let (p, j) = o.track.pose_at_within(t, DEFAULT_HORIZON)?;
            poses.push(p);
            jacobians.push(j);
        }
        Ok(ObjectPoses { timestamp: t, poses, jacobians })
    }

    /// Flattened world-frame Gaussians at `t`: static ones as-is, object ones
    /// rigidly moved by their pose.
    pub fn instantiate_world(&self, t: f64) -> Result<Vec<WorldGaussian>> {
        let poses = self.object_poses(t)?;
        Ok(self.instantiate_with(&poses.poses))
    }

    pub(crate) fn instantiate_with(&self, poses: &[Pose]) -> Vec<WorldGaussian> {
        let mut out = Vec::with_capacity(self.gaussian_count());
        out.extend(
            self.static_gaussians
                .iter()
                .enumerate()
                .map(|(index, g)| WorldGaussian { gaussian: g.clone(), source: Provenance::Static { index } }),
        );
        for (oi, (o, pose)) in self.objects.iter().zip(poses).enumerate() {
            for (index, g) in o.canonical.iter().enumerate() {
                out.push(WorldGaussian {
                    gaussian: transform_gaussian(g, pose),
                    source: Provenance::Object { object: oi, id: o.id, index },
                });
            }
        }
        out
    }
}

/// Applies a rigid pose to a Gaussian; appearance and semantics are copied.
pub fn transform_gaussian(g: &Gaussian3D, pose: &Pose) -> Gaussian3D {
    Gaussian3D {
        mu: pose.apply(&g.mu),
        rotation: quat_mul(&pose.quaternion(), &g.rotation),
        log_scale: g.log_scale,
        opacity_logit: g.opacity_logit,
        sh: g.sh.clone(),
        logits: g.logits.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::gaussian::covariance_of;
    use crate::scene::track::{PlanarState, Velocity};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, UnitQuaternion};

    fn object(theta: f64, mu: Vector3<f64>, scale: [f64; 3]) -> SceneGraph {
        let g = Gaussian3D {
            mu,
            rotation: UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
            log_scale: Vector3::new(scale[0].ln(), scale[1].ln(), scale[2].ln()),
            opacity_logit: 0.7,
            sh: vec![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 0.9], [1.0, 1.1, 1.2]],
            logits: vec![0.5, -1.5],
        };
        let track = UnicycleTrack {
            timestamps: vec![0.0],
            states: vec![PlanarState::new(0.0, 0.0, theta)],
            heights: vec![0.0],
            velocities: vec![],
        };
        let mut scene = SceneGraph::new(2, Vector3::zeros());
        scene.objects.push(DynamicObject { id: 7, canonical: vec![g], track });
        scene
    }

    #[test]
    fn identity_pose_is_exact_identity() {
        let scene = object(0.0, Vector3::new(0.3, -0.2, 1.1), [1.0, 2.0, 0.5]);
        let world = scene.instantiate_world(0.0).unwrap();
        assert_eq!(world[0].gaussian, scene.objects[0].canonical[0]);
        assert_eq!(world[0].source, Provenance::Object { object: 0, id: 7, index: 0 });
    }

    #[test]
    fn yaw_rotates_positions_and_covariance() {
        let mut scene = object(std::f64::consts::FRAC_PI_2, Vector3::new(1.0, 0.0, 0.0), [2.0, 1.0, 1.0]);
        scene.objects[0].canonical[0].rotation = UnitQuaternion::identity();
        let world = scene.instantiate_world(0.0).unwrap();
        let g = &world[0].gaussian;
        assert_relative_eq!(g.mu, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(covariance_of(g), Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn appearance_is_bit_identical_under_motion() {
        let scene = object(1.234, Vector3::new(0.5, 0.5, 0.5), [1.0, 0.3, 0.2]);
        let world = scene.instantiate_world(0.0).unwrap();
        let (a, b) = (&world[0].gaussian, &scene.objects[0].canonical[0]);
        assert_eq!(a.opacity_logit.to_bits(), b.opacity_logit.to_bits());
        assert_eq!(a.sh, b.sh);
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.log_scale, b.log_scale);
        // Covariance transforms as R Sigma R^T.
        let r = crate::scene::track::yaw_matrix(1.234);
        let expect = r * covariance_of(b) * r.transpose();
        assert_relative_eq!(covariance_of(a), expect, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut scene = object(0.0, Vector3::zeros(), [1.0, 1.0, 1.0]);
        let dup = scene.objects[0].clone();
        scene.objects.push(dup);
        assert!(scene.validate().is_err());
    }

    #[test]
    fn pose_errors_propagate() {
        let mut scene = object(0.0, Vector3::zeros(), [1.0, 1.0, 1.0]);
        scene.objects[0].track = UnicycleTrack::from_controls(
            PlanarState::new(0.0, 0.0, 0.0),
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![Velocity::new(1.0, 0.0)],
        )
        .unwrap();
        assert!(scene.instantiate_world(50.0).is_err());
    }
}
