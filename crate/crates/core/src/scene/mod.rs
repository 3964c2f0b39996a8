//! Domain types: Gaussians, cameras, object tracks, and the decomposed scene.

pub mod camera;
pub mod gaussian;
pub mod graph;
pub mod io;
pub mod track;

pub use camera::{Exposure, FrameCamera};
pub use gaussian::{covariance_of, logit, sigmoid, Gaussian3D};
pub use graph::{DynamicObject, ObjectPoses, Provenance, SceneGraph, WorldGaussian};
pub use track::{propagate, PlanarState, Pose, UnicycleTrack, Velocity};
