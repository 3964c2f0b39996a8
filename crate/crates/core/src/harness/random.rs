//! Small randomized scenes for gradient and oracle checks.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::{
    logit, DynamicObject, Exposure, FrameCamera, Gaussian3D, PlanarState, SceneGraph, UnicycleTrack, Velocity,
};

#[derive(Clone, Copy, Debug)]
pub struct RandomSceneSpec {
    pub static_count: usize,
    pub object_count: usize,
    pub per_object: usize,
    pub classes: usize,
    pub sh_degree: usize,
    pub width: usize,
    pub height: usize,
    pub opacity: (f64, f64),
    pub scale: (f64, f64),
}

impl Default for RandomSceneSpec {
    fn default() -> Self {
        Self {
            static_count: 14,
            object_count: 1,
            per_object: 6,
            classes: 3,
            sh_degree: 1,
            width: 48,
            height: 40,
            opacity: (0.15, 0.75),
            scale: (0.05, 0.35),
        }
    }
}

fn random_gaussian(rng: &mut ChaCha8Rng, center: Vector3<f64>, spread: f64, spec: &RandomSceneSpec) -> Gaussian3D {
    let mu = center
        + Vector3::new(
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
        );
    let rotation = UnitQuaternion::from_euler_angles(
        rng.random_range(-3.0..3.0),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.0..3.0),
    );
    let log_scale = Vector3::from_fn(|_, _| rng.random_range(spec.scale.0..spec.scale.1).ln());
    let n_sh = (spec.sh_degree + 1) * (spec.sh_degree + 1);
    let sh = (0..n_sh)
        .map(|k| {
            let amp = if k == 0 { 1.5 } else { 0.4 };
            [rng.random_range(-amp..amp), rng.random_range(-amp..amp), rng.random_range(-amp..amp)]
        })
        .collect();
    Gaussian3D {
        mu,
        rotation,
        log_scale,
        opacity_logit: logit(rng.random_range(spec.opacity.0..spec.opacity.1)),
        sh,
        logits: (0..spec.classes).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

/// A random scene around the origin plus three cameras looking at it along
/// world `+x`, at timestamps 0.5, 1.0, and 1.7 so that poses exercise both
/// stored states and propagated velocities. Exposures are non-trivial.
pub fn random_scene(seed: u64, spec: &RandomSceneSpec) -> (SceneGraph, Vec<FrameCamera>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = SceneGraph::new(spec.classes, Vector3::new(0.2, 0.3, 0.4));
    for _ in 0..spec.static_count {
        scene.static_gaussians.push(random_gaussian(&mut rng, Vector3::new(0.0, 0.0, 0.5), 1.2, spec));
    }
    for o in 0..spec.object_count {
        let canonical = (0..spec.per_object).map(|_| random_gaussian(&mut rng, Vector3::zeros(), 0.4, spec)).collect();
        let track = UnicycleTrack::from_controls(
            PlanarState::new(rng.random_range(-0.5..0.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
            vec![0.4, 0.5, 0.45],
            vec![0.0, 1.0, 2.0],
            vec![
                Velocity::new(rng.random_range(0.1..0.4), rng.random_range(-0.3..0.3)),
                Velocity::new(rng.random_range(0.1..0.4), rng.random_range(-0.3..0.3)),
            ],
        )
        .expect("valid track");
        scene.objects.push(DynamicObject { id: o as u32 + 1, canonical, track });
    }
    let f = 0.9 * spec.width as f64;
    let k = FrameCamera::pinhole(f, f, spec.width as f64 / 2.0, spec.height as f64 / 2.0);
    let cameras = [0.5, 1.0, 1.7]
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let eye = Vector3::new(-5.0, -0.3 + 0.3 * i as f64, 0.6);
            let mut cam =
                FrameCamera::look_at(spec.width, spec.height, k, eye, Vector3::new(0.0, 0.0, 0.4), Vector3::z(), t);
            cam.exposure = Exposure {
                a: Matrix3::identity() + Matrix3::from_fn(|_, _| rng.random_range(-0.1..0.1)),
                b: Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05)),
            };
            cam
        })
        .collect();
    (scene, cameras)
}
