//! JSON documents for scenes, tracks, and camera rigs.
//!
//! Field names here are the on-disk contract documented in `docs/FORMATS.md`.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::{Exposure, FrameCamera};
use super::gaussian::{quat_from_wxyz, Gaussian3D};
use super::graph::{DynamicObject, SceneGraph};
use super::track::{PlanarState, UnicycleTrack, Velocity};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GaussianRecord {
    pub mu: [f64; 3],
    /// `[w, x, y, z]`
    pub quat: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    /// Flat `3 (D+1)^2` coefficients, basis-major: `[Y0.r, Y0.g, Y0.b, Y1.r, ...]`.
    pub sh: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrackRecord {
    pub timestamps: Vec<f64>,
    /// `[x, y, theta]` per timestamp.
    pub states: Vec<[f64; 3]>,
    pub heights: Vec<f64>,
    /// `[v, omega]` per interval.
    pub velocities: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ObjectRecord {
    pub id: u32,
    pub canonical: Vec<GaussianRecord>,
    pub track: TrackRecord,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneRecord {
    pub class_count: usize,
    pub background_color: [f64; 3],
    pub static_gaussians: Vec<GaussianRecord>,
    pub objects: Vec<ObjectRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ExposureRecord {
    pub a: [[f64; 3]; 3],
    pub b: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CameraRecord {
    pub width: usize,
    pub height: usize,
    /// Row-major 3x3 `K`.
    pub intrinsics: [[f64; 3]; 3],
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub timestamp: f64,
    #[serde(default = "identity_exposure")]
    pub exposure: ExposureRecord,
}

fn identity_exposure() -> ExposureRecord {
    ExposureRecord::from(&Exposure::identity())
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CameraRigRecord {
    pub frames: Vec<CameraRecord>,
}

fn mat_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
}

fn rows_mat(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2])
}

impl From<&Gaussian3D> for GaussianRecord {
    fn from(g: &Gaussian3D) -> Self {
        Self {
            mu: g.mu.into(),
            quat: g.quat_wxyz(),
            log_scale: g.log_scale.into(),
            opacity_logit: g.opacity_logit,
            sh: g.sh.iter().flatten().copied().collect(),
            logits: g.logits.clone(),
        }
    }
}

impl TryFrom<&GaussianRecord> for Gaussian3D {
    type Error = Error;

    fn try_from(r: &GaussianRecord) -> Result<Self> {
        if !r.sh.len().is_multiple_of(3) || crate::sh::degree_checked(r.sh.len() / 3).is_none() {
            return Err(Error::Invalid(format!("sh must hold 3 (D+1)^2 values, got {}", r.sh.len())));
        }
        let qn = r.quat.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !qn.is_finite() || qn <= 0.0 {
            return Err(Error::Invalid("quaternion must be non-zero".into()));
        }
        Ok(Gaussian3D {
            mu: Vector3::from(r.mu),
            rotation: quat_from_wxyz(r.quat),
            log_scale: Vector3::from(r.log_scale),
            opacity_logit: r.opacity_logit,
            sh: r.sh.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            logits: r.logits.clone(),
        })
    }
}

impl From<&UnicycleTrack> for TrackRecord {
    fn from(t: &UnicycleTrack) -> Self {
        Self {
            timestamps: t.timestamps.clone(),
            states: t.states.iter().map(|s| [s.x, s.y, s.theta]).collect(),
            heights: t.heights.clone(),
            velocities: t.velocities.iter().map(|v| [v.v, v.omega]).collect(),
        }
    }
}

impl TryFrom<&TrackRecord> for UnicycleTrack {
    type Error = Error;

    fn try_from(r: &TrackRecord) -> Result<Self> {
        let t = UnicycleTrack {
            timestamps: r.timestamps.clone(),
            states: r.states.iter().map(|s| PlanarState::new(s[0], s[1], s[2])).collect(),
            heights: r.heights.clone(),
            velocities: r.velocities.iter().map(|v| Velocity::new(v[0], v[1])).collect(),
        };
        t.validate()?;
        Ok(t)
    }
}

impl From<&SceneGraph> for SceneRecord {
    fn from(s: &SceneGraph) -> Self {
        Self {
            class_count: s.class_count,
            background_color: s.background.into(),
            static_gaussians: s.static_gaussians.iter().map(Into::into).collect(),
            objects: s
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    id: o.id,
                    canonical: o.canonical.iter().map(Into::into).collect(),
                    track: (&o.track).into(),
                })
                .collect(),
        }
    }
}

impl TryFrom<&SceneRecord> for SceneGraph {
    type Error = Error;

    fn try_from(r: &SceneRecord) -> Result<Self> {
        let static_gaussians = r.static_gaussians.iter().map(Gaussian3D::try_from).collect::<Result<Vec<_>>>()?;
        let objects = r
            .objects
            .iter()
            .map(|o| {
                Ok(DynamicObject {
                    id: o.id,
                    canonical: o.canonical.iter().map(Gaussian3D::try_from).collect::<Result<Vec<_>>>()?,
                    track: UnicycleTrack::try_from(&o.track)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = SceneGraph {
            static_gaussians,
            objects,
            class_count: r.class_count,
            background: Vector3::from(r.background_color),
        };
        scene.validate()?;
        Ok(scene)
    }
}

impl From<&Exposure> for ExposureRecord {
    fn from(e: &Exposure) -> Self {
        Self { a: mat_rows(&e.a), b: e.b.into() }
    }
}

impl From<&ExposureRecord> for Exposure {
    fn from(r: &ExposureRecord) -> Self {
        Exposure { a: rows_mat(&r.a), b: Vector3::from(r.b) }
    }
}

impl From<&FrameCamera> for CameraRecord {
    fn from(c: &FrameCamera) -> Self {
        Self {
            width: c.width,
            height: c.height,
            intrinsics: mat_rows(&c.intrinsics),
            rotation: mat_rows(&c.rotation),
            translation: c.translation.into(),
            timestamp: c.timestamp,
            exposure: (&c.exposure).into(),
        }
    }
}

impl TryFrom<&CameraRecord> for FrameCamera {
    type Error = Error;

    fn try_from(r: &CameraRecord) -> Result<Self> {
        let mut cam = FrameCamera::new(
            r.width,
            r.height,
            rows_mat(&r.intrinsics),
            rows_mat(&r.rotation),
            Vector3::from(r.translation),
            r.timestamp,
        );
        cam.exposure = (&r.exposure).into();
        cam.validate()?;
        Ok(cam)
    }
}

pub fn scene_to_json(scene: &SceneGraph) -> Result<String> {
    Ok(serde_json::to_string_pretty(&SceneRecord::from(scene))?)
}

pub fn scene_from_json(text: &str) -> Result<SceneGraph> {
    let rec: SceneRecord = serde_json::from_str(text)?;
    SceneGraph::try_from(&rec)
}

pub fn save_scene(scene: &SceneGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, scene_to_json(scene)?)?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneGraph> {
    scene_from_json(&fs::read_to_string(path)?)
}

pub fn save_track(track: &UnicycleTrack, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&TrackRecord::from(track))?)?;
    Ok(())
}

pub fn load_track(path: impl AsRef<Path>) -> Result<UnicycleTrack> {
    let rec: TrackRecord = serde_json::from_str(&fs::read_to_string(path)?)?;
    UnicycleTrack::try_from(&rec)
}

pub fn save_cameras(cams: &[FrameCamera], path: impl AsRef<Path>) -> Result<()> {
    let rig = CameraRigRecord { frames: cams.iter().map(Into::into).collect() };
    fs::write(path, serde_json::to_string_pretty(&rig)?)?;
    Ok(())
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<FrameCamera>> {
    let rig: CameraRigRecord = serde_json::from_str(&fs::read_to_string(path)?)?;
    rig.frames.iter().map(FrameCamera::try_from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::track::Velocity;
    use nalgebra::UnitQuaternion;

    fn sample_scene() -> SceneGraph {
        let mut scene = SceneGraph::new(3, Vector3::new(0.1, 0.2, 0.3));
        let g = Gaussian3D {
            mu: Vector3::new(1.0 / 3.0, -2.5e-7, 1e12),
            rotation: UnitQuaternion::from_euler_angles(0.3, 0.2, 0.1),
            log_scale: Vector3::new(-1.0, 0.25, 0.1),
            opacity_logit: -0.123456789012345,
            sh: vec![[0.1, 0.2, 0.3], [1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]],
            logits: vec![0.1, 0.2, std::f64::consts::PI],
        };
        scene.static_gaussians.push(g.clone());
        let track = UnicycleTrack::from_controls(
            PlanarState::new(0.5, 0.25, 0.1),
            vec![0.7, 0.8],
            vec![3.0, 5.0],
            vec![Velocity::new(0.9, 0.01)],
        )
        .unwrap();
        scene.objects.push(DynamicObject { id: 4, canonical: vec![g], track });
        scene
    }

    #[test]
    fn scene_json_preserves_every_float() {
        let scene = sample_scene();
        let text = scene_to_json(&scene).unwrap();
        let back = scene_from_json(&text).unwrap();
        assert_eq!(SceneRecord::from(&back), SceneRecord::from(&scene));
    }

    #[test]
    fn malformed_documents_are_rejected() {
        let mut rec = SceneRecord::from(&sample_scene());
        rec.static_gaussians[0].sh.pop();
        let text = serde_json::to_string(&rec).unwrap();
        assert!(scene_from_json(&text).is_err());

        let mut rec = SceneRecord::from(&sample_scene());
        rec.objects[0].track.velocities.clear();
        let text = serde_json::to_string(&rec).unwrap();
        assert!(scene_from_json(&text).is_err());

        assert!(scene_from_json("{\"class_count\": 2}").is_err());
    }

    #[test]
    fn camera_rig_roundtrip() {
        let k = FrameCamera::pinhole(100.0, 90.0, 32.0, 24.0);
        let mut cam = FrameCamera::look_at(
            64,
            48,
            k,
            Vector3::new(0.0, 0.0, 1.5),
            Vector3::new(10.0, 0.5, 1.0),
            Vector3::z(),
            2.0,
        );
        cam.exposure.b = Vector3::new(0.01, 0.0, -0.02);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cams.json");
        save_cameras(&[cam.clone()], &path).unwrap();
        let back = load_cameras(&path).unwrap();
        assert_eq!(back, vec![cam]);
    }
}
