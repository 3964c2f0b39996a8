//! Noisy supervision synthesized from clean renders of the ground truth.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ExperimentConfig, NoiseSpec};
use super::render_options;
use super::scene_gen::GeneratedScene;
use crate::compositor::{apply_exposure, Modalities};
use crate::error::Result;
use crate::metrics::argmax;
use crate::raster::Image;
use crate::render::render_frame;
use crate::scene::Exposure;
use crate::unicycle::{BoxNoise, NoisyBoxTrack};

/// Pixels with at least this accumulated opacity carry labels and flow.
pub const COVERED_ALPHA: f64 = 0.5;
/// Pixels with at least this accumulated opacity carry reference depth.
pub const OPAQUE_ALPHA: f64 = 0.98;

#[derive(Clone, Debug)]
pub struct FrameTarget {
    /// Target color with the frame's synthetic exposure applied.
    pub image: Image,
    /// Clean color before exposure.
    pub clean: Image,
    pub exposure: Exposure,
    /// Noisy labels used for supervision.
    pub labels: Vec<Option<u32>>,
    /// Labels before flipping, used for evaluation.
    pub clean_labels: Vec<Option<u32>>,
    /// Frame the flow points to, when one exists.
    pub flow_to: Option<usize>,
    pub flow: Vec<f64>,
    pub flow_valid: Vec<bool>,
    pub depth: Vec<Option<f64>>,
}

#[derive(Clone, Debug)]
pub struct PseudoGt {
    pub frames: Vec<FrameTarget>,
    /// Noisy boxes of each object.
    pub boxes: Vec<NoisyBoxTrack>,
}

/// Smooth per-frame, per-channel exposure with the configured amplitudes.
pub fn synthetic_exposure(frame: usize, frames: usize, noise: &NoiseSpec) -> Exposure {
    let phase = 2.0 * std::f64::consts::PI * frame as f64 / frames.max(1) as f64;
    let gain = Vector3::from_fn(|c, _| 1.0 + noise.exposure_gain * (1.5 * phase + 2.1 * c as f64).sin());
    let bias = Vector3::from_fn(|c, _| noise.exposure_bias * (phase + c as f64).sin());
    Exposure { a: Matrix3::from_diagonal(&gain), b: bias }
}

/// Applies `e` to every pixel of a 3-channel image, without clamping.
pub fn expose(img: &Image, e: &Exposure) -> Image {
    Image { data: apply_exposure(&img.data, &e.a, &e.b), ..img.clone() }
}

/// Replaces each label by a uniformly drawn different class with probability
/// `rate`.
pub fn flip_labels(labels: &mut [Option<u32>], classes: usize, rate: f64, rng: &mut impl Rng) {
    if rate <= 0.0 || classes < 2 {
        return;
    }
    for l in labels.iter_mut().flatten() {
        if rng.random_bool(rate) {
            let k = rng.random_range(0..classes as u32 - 1);
            *l = if k >= *l { k + 1 } else { k };
        }
    }
}

pub fn gen_pseudo_gt(gen: &GeneratedScene, cfg: &ExperimentConfig) -> Result<PseudoGt> {
    let noise = &cfg.noise;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_9d7a);
    let n = gen.cameras.len();
    let classes = gen.scene.class_count;
    let opts = render_options(Modalities { semantic_2d: false, ..Modalities::ALL }, false);
    let flow_noise = Normal::new(0.0, noise.flow_sigma.max(0.0)).expect("finite sigma");
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let flow_to = Some(i + cfg.training.flow_stride).filter(|j| *j < n);
        let out = render_frame(&gen.scene, &gen.cameras[i], flow_to.map(|j| &gen.cameras[j]), &opts)?;
        let b = &out.buffers;
        let clean = Image::new(b.width, b.height, 3, b.color.clone())?;
        let exposure = synthetic_exposure(i, n, noise);
        let image = expose(&clean, &exposure);
        let mut labels: Vec<Option<u32>> = (0..b.width * b.height)
            .map(|p| {
                (b.accum_alpha[p] >= COVERED_ALPHA).then(|| argmax(&b.semantic[p * classes..(p + 1) * classes]) as u32)
            })
            .collect();
        let clean_labels = labels.clone();
        flip_labels(&mut labels, classes, noise.label_flip, &mut rng);
        let (mut flow, flow_valid) = if flow_to.is_some() {
            (b.flow.clone(), b.accum_alpha.iter().map(|a| *a >= COVERED_ALPHA).collect())
        } else {
            (vec![0.0; 2 * b.width * b.height], vec![false; b.width * b.height])
        };
        if noise.flow_sigma > 0.0 {
            for v in flow.iter_mut() {
                *v += flow_noise.sample(&mut rng);
            }
        }
        let depth = b.depth.iter().zip(&b.accum_alpha).map(|(d, a)| (*a >= OPAQUE_ALPHA).then_some(*d)).collect();
        frames.push(FrameTarget { image, clean, exposure, labels, clean_labels, flow_to, flow, flow_valid, depth });
    }
    let box_noise = BoxNoise { level: noise.box_level };
    let boxes = gen.scene.objects.iter().map(|o| box_noise.corrupt(&o.track, &mut rng)).collect();
    Ok(PseudoGt { frames, boxes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scene_gen::gen_scene;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig { width: 40, height: 30, ..Default::default() };
        c.camera.frames = 4;
        c.scene.ground = 80;
        c.scene.per_building = 15;
        c.scene.backdrop = 30;
        c.scene.per_object = 10;
        c
    }

    #[test]
    fn zero_noise_equals_clean_ground_truth() {
        let c = small();
        let g = gen_scene(&c).unwrap();
        let p = gen_pseudo_gt(&g, &c).unwrap();
        for f in &p.frames {
            assert_eq!(f.image, f.clean);
        }
        for (b, o) in p.boxes.iter().zip(&g.scene.objects) {
            assert_eq!(*b, NoisyBoxTrack::from_track(&o.track));
        }
        let mut noisy = c.clone();
        noisy.noise.flow_sigma = 0.5;
        let q = gen_pseudo_gt(&g, &noisy).unwrap();
        assert_eq!(q.frames[0].clean, p.frames[0].clean);
        assert_ne!(q.frames[0].flow, p.frames[0].flow);
    }

    #[test]
    fn full_flip_with_two_classes_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut l = vec![Some(0), Some(1), None, Some(1)];
        flip_labels(&mut l, 2, 1.0, &mut rng);
        assert_eq!(l, vec![Some(1), Some(0), None, Some(0)]);
    }

    #[test]
    fn flipped_labels_always_change_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let orig: Vec<Option<u32>> = (0..500).map(|i| Some(i % 5)).collect();
        let mut l = orig.clone();
        flip_labels(&mut l, 5, 1.0, &mut rng);
        assert!(l.iter().zip(&orig).all(|(a, b)| a != b && a.unwrap() < 5));
    }

    #[test]
    fn exposure_gain_scales_linearly() {
        let img = Image::new(2, 1, 3, vec![0.1, 0.2, 0.3, 0.9, 0.8, 0.7]).unwrap();
        let e = Exposure { a: Matrix3::identity() * 1.2, b: Vector3::zeros() };
        let out = expose(&img, &e);
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - 1.2 * b).abs() < 1e-15);
        }
        assert!(out.data[3] > 1.0);
    }
}
