//! Experiment configuration, read from and echoed as JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diff::LearningRates;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::unicycle::{FitMode, SmoothTerm, Solver};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Seeds of the repeated runs of an ablation.
    pub seeds: Vec<u64>,
    pub width: usize,
    pub height: usize,
    pub camera: CameraPathSpec,
    pub scene: SceneSpec,
    pub noise: NoiseSpec,
    pub init: InitSpec,
    pub toggles: LossToggles,
    pub weights: LossWeights,
    pub training: TrainingSpec,
    pub tracking: TrackingSpec,
    pub bench: BenchSpec,
    /// Directory receiving the config echo, metrics, images, and tracks.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: (0..10).collect(),
            width: 256,
            height: 192,
            camera: CameraPathSpec::default(),
            scene: SceneSpec::default(),
            noise: NoiseSpec::default(),
            init: InitSpec::default(),
            toggles: LossToggles::default(),
            weights: LossWeights::default(),
            training: TrainingSpec::default(),
            tracking: TrackingSpec::default(),
            bench: BenchSpec::default(),
            output: None,
        }
    }
}

/// Ego-vehicle style path: forward motion along world `+x` with a slow
/// lateral sway, looking ahead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraPathSpec {
    pub frames: usize,
    /// Meters per frame along `+x`.
    pub speed: f64,
    /// Amplitude of the lateral sway (meters).
    pub lateral: f64,
    pub height: f64,
    /// Distance to the look-at point.
    pub look_ahead: f64,
    /// Focal length as a multiple of the image width.
    pub focal: f64,
}

impl Default for CameraPathSpec {
    fn default() -> Self {
        Self { frames: 30, speed: 0.4, lateral: 0.3, height: 1.5, look_ahead: 10.0, focal: 0.8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub classes: usize,
    pub sh_degree: usize,
    pub ground: usize,
    pub buildings: usize,
    pub per_building: usize,
    pub backdrop: usize,
    pub objects: usize,
    pub per_object: usize,
    /// Per-Gaussian color variation on static surfaces; zero gives
    /// textureless regions.
    pub texture: f64,
    /// Range of object forward speed (meters per frame).
    pub object_speed: (f64, f64),
    /// Largest object turn rate (radians per frame).
    pub object_turn: f64,
    /// Number of constant-turn-rate segments per object track.
    pub turn_segments: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            sh_degree: 0,
            ground: 1200,
            buildings: 6,
            per_building: 150,
            backdrop: 300,
            objects: 1,
            per_object: 120,
            texture: 0.15,
            object_speed: (0.3, 0.6),
            object_turn: 0.02,
            turn_segments: 3,
        }
    }
}

/// Corruption applied to pseudo ground truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Box noise as a multiple of the 10% setting (0.5, 1, 2 for 5/10/20%).
    pub box_level: f64,
    /// Probability of replacing a semantic label by a different class.
    pub label_flip: f64,
    /// Standard deviation of additive flow noise (pixels).
    pub flow_sigma: f64,
    /// Amplitude of the smooth per-frame, per-channel exposure gain.
    pub exposure_gain: f64,
    /// Amplitude of the smooth per-frame exposure offset.
    pub exposure_bias: f64,
}

/// How the trained scene is initialized from ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSpec {
    /// Isotropic position noise (meters).
    pub position_sigma: f64,
    /// Position noise along the ray from the first camera (meters).
    pub ray_sigma: f64,
    pub color_sigma: f64,
    pub log_scale_sigma: f64,
    pub logit_sigma: f64,
    /// Backdrop-colored Gaussians with wrong-class logits placed in front of
    /// the backdrop.
    pub floaters: usize,
    pub floater_opacity: f64,
    /// Initialize object tracks from the noisy boxes instead of ground truth.
    pub tracks_from_boxes: bool,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            position_sigma: 0.0,
            ray_sigma: 0.0,
            color_sigma: 0.0,
            log_scale_sigma: 0.0,
            logit_sigma: 0.0,
            floaters: 0,
            floater_opacity: 0.9,
            tracks_from_boxes: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticPath {
    /// Per-Gaussian softmax, then compositing.
    #[default]
    ThreeD,
    /// Compositing of raw logits, then a per-pixel softmax.
    TwoD,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossToggles {
    pub semantic: bool,
    pub flow: bool,
    pub affine: bool,
    pub semantic_path: SemanticPath,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self { semantic: true, flow: true, affine: true, semantic_path: SemanticPath::ThreeD }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    pub iterations: usize,
    pub rates: LearningRates,
    pub track_decay: f64,
    /// Hold out every other frame for evaluation.
    pub holdout: bool,
    /// Flow targets point from frame `i` to frame `i + flow_stride`.
    pub flow_stride: usize,
    pub train_tracks: bool,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            iterations: 300,
            rates: LearningRates::default(),
            track_decay: 0.995,
            holdout: true,
            flow_stride: 2,
            train_tracks: false,
        }
    }
}

/// Settings of the track-rectification experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingSpec {
    pub levels: Vec<f64>,
    pub modes: Vec<FitMode>,
    pub smooth: SmoothTerm,
    pub solver: Solver,
    pub iterations: usize,
    /// Couple the fits to the image loss of the clean renders, one frame per
    /// iteration.
    pub photometric: bool,
}

impl Default for TrackingSpec {
    fn default() -> Self {
        Self {
            levels: vec![0.5, 1.0, 2.0],
            modes: FitMode::ALL.to_vec(),
            smooth: SmoothTerm::Theta,
            solver: Solver::GradientDescent,
            iterations: 3000,
            photometric: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub splats: usize,
    pub width: usize,
    pub height: usize,
    pub repeats: usize,
    pub brute_force: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self { splats: 20_000, width: 256, height: 256, repeats: 3, brute_force: true }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("image size must be positive".into()));
        }
        if self.camera.frames < 2 {
            return Err(Error::Invalid("need at least two frames".into()));
        }
        if self.scene.classes < 2 {
            return Err(Error::Invalid("need at least two semantic classes".into()));
        }
        if self.scene.objects > 0 && self.scene.classes < 4 {
            return Err(Error::Invalid("dynamic objects use class 3".into()));
        }
        if !(0.0..=1.0).contains(&self.noise.label_flip) {
            return Err(Error::Invalid("label flip rate must lie in [0, 1]".into()));
        }
        if self.noise.box_level < 0.0 || self.noise.flow_sigma < 0.0 {
            return Err(Error::Invalid("noise scales must be non-negative".into()));
        }
        if !(self.init.floater_opacity > 0.0 && self.init.floater_opacity < 1.0) {
            return Err(Error::Invalid("floater opacity must lie in (0, 1)".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Invalid("need at least one seed".into()));
        }
        if self.training.flow_stride == 0 {
            return Err(Error::Invalid("flow stride must be positive".into()));
        }
        self.weights.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
