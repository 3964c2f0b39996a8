//! Full forward pass for one frame: instantiate, project, bin, composite,
//! apply exposure. Keeps what the backward pass needs.

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::compositor::{apply_exposure, composite, splat_flow, Modalities, RenderBuffers, Tape};
use crate::error::Result;
use crate::projection::{
    bin_tiles, project_gaussian_detailed, ProjectionConfig, ProjectionDetail, Splat2D, TileGrid, DEFAULT_TILE_SIZE,
};
use crate::scene::{FrameCamera, ObjectPoses, Provenance, SceneGraph, WorldGaussian};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub modalities: Modalities,
    /// Apply the camera's exposure affine to produce `color_exposed`.
    pub exposure: bool,
    pub tile_size: usize,
    pub projection: ProjectionConfig,
    /// Record per-pixel contribution lists for the backward pass.
    pub record_tape: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            modalities: Modalities::ALL,
            exposure: true,
            tile_size: DEFAULT_TILE_SIZE,
            projection: ProjectionConfig::default(),
            record_tape: false,
        }
    }
}

/// Wall time of each stage of one render.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    /// Instantiation, projection, flow vectors, sorting, and binning.
    pub preparation: Duration,
    pub compositing: Duration,
    pub exposure: Duration,
}

/// Everything the backward pass needs about a forward render.
#[derive(Clone, Debug)]
pub struct ForwardRecord {
    pub camera: FrameCamera,
    pub flow_camera: Option<FrameCamera>,
    pub poses: ObjectPoses,
    pub flow_poses: Option<ObjectPoses>,
    pub world: Vec<WorldGaussian>,
    /// Index into `world` for each splat.
    pub splat_world: Vec<u32>,
    pub details: Vec<ProjectionDetail>,
    pub exposure_applied: bool,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub buffers: RenderBuffers,
    pub splats: Vec<Splat2D>,
    pub grid: TileGrid,
    pub tape: Option<Tape>,
    pub record: ForwardRecord,
    pub timings: StageTimings,
}

/// Renders `scene` from `cam`. When `flow_camera` is given, per-splat flow
/// vectors point from this frame to that one.
pub fn render_frame(
    scene: &SceneGraph,
    cam: &FrameCamera,
    flow_camera: Option<&FrameCamera>,
    opts: &RenderOptions,
) -> Result<RenderOutput> {
    let start = Instant::now();
    let poses = scene.object_poses(cam.timestamp)?;
    let world = scene.instantiate_with(&poses.poses);
    let want_flow = opts.modalities.flow && flow_camera.is_some();
    let flow_poses = match flow_camera {
        Some(fc) if want_flow => Some(scene.object_poses(fc.timestamp)?),
        _ => None,
    };

    let projected: Vec<(u32, Splat2D, ProjectionDetail)> = world
        .par_iter()
        .enumerate()
        .filter_map(|(i, wg)| {
            let (mut splat, detail) = project_gaussian_detailed(&wg.gaussian, cam, &opts.projection)?;
            splat.source = wg.source;
            if let (Some(fc), Some(fp)) = (flow_camera, flow_poses.as_ref()) {
                let mu2 = position_at(scene, wg, fp);
                splat.flow = splat_flow(&wg.gaussian.mu, &mu2, cam, fc, opts.projection.near);
            }
            Some((i as u32, splat, detail))
        })
        .collect();
    let mut splat_world = Vec::with_capacity(projected.len());
    let mut splats = Vec::with_capacity(projected.len());
    let mut details = Vec::with_capacity(projected.len());
    for (i, s, d) in projected {
        splat_world.push(i);
        splats.push(s);
        details.push(d);
    }
    let grid = bin_tiles(&splats, cam.width, cam.height, opts.tile_size);
    let preparation = start.elapsed();

    let start = Instant::now();
    let (mut buffers, tape) =
        composite(&grid, &splats, &scene.background, scene.class_count, &opts.modalities, opts.record_tape);
    let compositing = start.elapsed();

    let start = Instant::now();
    if opts.exposure && opts.modalities.rgb {
        buffers.color_exposed = apply_exposure(&buffers.color, &cam.exposure.a, &cam.exposure.b);
    }
    let exposure = start.elapsed();

    Ok(RenderOutput {
        buffers,
        splats,
        grid,
        tape,
        record: ForwardRecord {
            camera: cam.clone(),
            flow_camera: flow_camera.filter(|_| want_flow).cloned(),
            poses,
            flow_poses,
            world,
            splat_world,
            details,
            exposure_applied: opts.exposure && opts.modalities.rgb,
        },
        timings: StageTimings { preparation, compositing, exposure },
    })
}

/// World position of a Gaussian's center under another set of object poses.
pub(crate) fn position_at(scene: &SceneGraph, wg: &WorldGaussian, poses: &ObjectPoses) -> Vector3<f64> {
    match wg.source {
        Provenance::Static { .. } => wg.gaussian.mu,
        Provenance::Object { object, index, .. } => {
            poses.poses[object].apply(&scene.objects[object].canonical[index].mu)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compositor::composite_brute_force;
    use crate::scene::Gaussian3D;
    use nalgebra::Matrix3;

    fn scene() -> (SceneGraph, FrameCamera) {
        let mut scene = SceneGraph::new(2, Vector3::new(0.1, 0.1, 0.1));
        for i in 0..6 {
            let x = -0.6 + 0.25 * i as f64;
            scene.static_gaussians.push(Gaussian3D::isotropic(
                Vector3::new(x, 0.1 * i as f64 - 0.2, 4.0 + 0.3 * i as f64),
                0.2,
                0.6,
                [0.2 * i as f64, 0.5, 0.9 - 0.1 * i as f64],
                vec![i as f64 * 0.3, -0.2],
            ));
        }
        let cam = FrameCamera::new(
            40,
            30,
            FrameCamera::pinhole(40.0, 40.0, 20.0, 15.0),
            Matrix3::identity(),
            Vector3::zeros(),
            0.0,
        );
        (scene, cam)
    }

    #[test]
    fn tiled_matches_brute_force() {
        let (scene, cam) = scene();
        let out = render_frame(&scene, &cam, None, &RenderOptions::default()).unwrap();
        let brute = composite_brute_force(40, 30, &out.splats, &scene.background, 2, &Modalities::ALL);
        for (a, b) in out.buffers.color.iter().zip(&brute.color) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn rgb_only_matches_all_modalities_bitwise() {
        let (scene, cam) = scene();
        let all = render_frame(&scene, &cam, Some(&cam), &RenderOptions::default()).unwrap();
        let rgb = render_frame(
            &scene,
            &cam,
            None,
            &RenderOptions { modalities: Modalities::RGB, ..RenderOptions::default() },
        )
        .unwrap();
        assert_eq!(all.buffers.color, rgb.buffers.color);
        assert!(rgb.buffers.semantic.is_empty());
    }

    #[test]
    fn exposure_only_touches_exposed_buffer() {
        let (scene, mut cam) = scene();
        cam.exposure.a = Matrix3::identity() * 1.2;
        let out = render_frame(&scene, &cam, None, &RenderOptions::default()).unwrap();
        for (e, c) in out.buffers.color_exposed.iter().zip(&out.buffers.color) {
            assert!((e - 1.2 * c).abs() < 1e-12);
        }
    }
}
