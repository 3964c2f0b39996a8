//! Experiment drivers, one per ablation table.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SemanticPath};
use super::pseudo_gt::{gen_pseudo_gt, PseudoGt};
use super::render_options;
use super::scene_gen::{gen_scene, GeneratedScene};
use super::train::{evaluate, init_state, render_views, train, EvalReport, TrainLog, TrainState};
use crate::compositor::Modalities;
use crate::diff::grads::TrackGrad;
use crate::diff::{backward, Upstream};
use crate::error::{Error, Result};
use crate::losses::loss_image_grad;
use crate::metrics::{chamfer, extract_semantic_pointcloud, miou, nearest_labels, psnr, ssim};
use crate::raster::Image;
use crate::render::{render_frame, RenderOptions};
use crate::scene::UnicycleTrack;
use crate::unicycle::{
    fit_track, fit_track_coupled, pose_errors, track_poses, BoxNoise, FitConfig, FitMode, NoisyBoxTrack,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationName {
    DynamicNoise,
    StaticLosses,
    Softmax3d,
    Exposure,
}

impl AblationName {
    pub const ALL: [AblationName; 4] =
        [AblationName::DynamicNoise, AblationName::StaticLosses, AblationName::Softmax3d, AblationName::Exposure];

    pub fn name(&self) -> &'static str {
        match self {
            AblationName::DynamicNoise => "dynamic_noise",
            AblationName::StaticLosses => "static_losses",
            AblationName::Softmax3d => "softmax3d",
            AblationName::Exposure => "exposure",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::Usage(format!(
                "unknown ablation {s:?}; expected dynamic_noise, static_losses, softmax3d or exposure"
            ))
        })
    }
}

/// Files produced alongside a report.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub images: Vec<(String, Image)>,
    pub tracks: Vec<(String, UnicycleTrack)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ablation", rename_all = "snake_case")]
pub enum AblationReport {
    DynamicNoise(DynamicNoiseReport),
    StaticLosses(VariantsReport),
    Softmax3d(SoftmaxReport),
    Exposure(VariantsReport),
}

pub fn run_ablation(name: AblationName, cfg: &ExperimentConfig) -> Result<(AblationReport, Artifacts)> {
    cfg.validate()?;
    Ok(match name {
        AblationName::DynamicNoise => {
            let (r, a) = dynamic_noise(cfg)?;
            (AblationReport::DynamicNoise(r), a)
        }
        AblationName::StaticLosses => {
            let (r, a) = static_losses(cfg)?;
            (AblationReport::StaticLosses(r), a)
        }
        AblationName::Softmax3d => {
            let (r, a) = softmax3d(cfg)?;
            (AblationReport::Softmax3d(r), a)
        }
        AblationName::Exposure => {
            let (r, a) = exposure(cfg)?;
            (AblationReport::Exposure(r), a)
        }
    })
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn seeded(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    ExperimentConfig { seed, ..cfg.clone() }
}

/// Generated scene, its pseudo ground truth, and the trained state.
pub struct Run {
    pub gen: GeneratedScene,
    pub pgt: PseudoGt,
    pub state: TrainState,
    pub log: TrainLog,
    pub eval: EvalReport,
}

/// Generates, trains, and evaluates one configuration.
pub fn run_training(cfg: &ExperimentConfig) -> Result<Run> {
    let gen = gen_scene(cfg)?;
    let pgt = gen_pseudo_gt(&gen, cfg)?;
    run_training_on(gen, pgt, cfg)
}

fn run_training_on(gen: GeneratedScene, pgt: PseudoGt, cfg: &ExperimentConfig) -> Result<Run> {
    let mut state = init_state(&gen, &pgt, cfg)?;
    let log = train(&mut state, &pgt, cfg)?;
    let eval = evaluate(&state, &pgt, cfg)?;
    Ok(Run { gen, pgt, state, log, eval })
}

fn first_view(run: &Run, cfg: &ExperimentConfig) -> Result<Image> {
    let frame = run.eval.frames.first().copied().unwrap_or(0);
    Ok(render_views(&run.state, cfg, &[frame])?.remove(0))
}

// Tracking under box noise

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingCell {
    pub level: f64,
    pub mode: FitMode,
    /// Mean rotation error (radians) per seed.
    pub e_r: Vec<f64>,
    /// Mean translation error (meters) per seed.
    pub e_t: Vec<f64>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_e_r: f64,
    pub mean_e_t: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicNoiseReport {
    pub seeds: Vec<u64>,
    pub cells: Vec<TrackingCell>,
}

impl DynamicNoiseReport {
    pub fn cell(&self, level: f64, mode: FitMode) -> Option<&TrackingCell> {
        self.cells.iter().find(|c| c.level == level && c.mode == mode)
    }
}

/// Renders the ground-truth scene with the object tracks replaced by
/// `tracks` and scores every frame against the clean targets.
fn score_tracks(gen: &GeneratedScene, targets: &[Image], tracks: &[UnicycleTrack]) -> Result<(f64, f64)> {
    let mut scene = gen.scene.clone();
    for (o, t) in scene.objects.iter_mut().zip(tracks) {
        o.track = t.clone();
    }
    let opts = render_options(Modalities::RGB, false);
    let (mut p, mut s) = (0.0, 0.0);
    for (cam, target) in gen.cameras.iter().zip(targets) {
        let b = render_frame(&scene, cam, None, &opts)?.buffers;
        let img = Image::new(b.width, b.height, 3, b.color)?;
        p += psnr(&img, target)?.min(PSNR_CAP);
        s += ssim(&img, target)?;
    }
    let n = targets.len() as f64;
    Ok((p / n, s / n))
}

/// Fits each object's track with the image loss of one frame per iteration
/// added to the motion losses; the other objects stay at their observations.
fn fit_photometric(
    gen: &GeneratedScene,
    targets: &[Image],
    obs: &[NoisyBoxTrack],
    fit: &FitConfig,
    lambda_ssim: f64,
) -> Result<Vec<UnicycleTrack>> {
    let mut scene = gen.scene.clone();
    for (o, b) in scene.objects.iter_mut().zip(obs) {
        o.track = b.to_track()?;
    }
    let opts = RenderOptions { record_tape: true, ..render_options(Modalities::RGB, false) };
    let n = gen.cameras.len();
    let mut fitted = Vec::with_capacity(obs.len());
    for (k, b) in obs.iter().enumerate() {
        let mut frame = 0usize;
        let mut coupling = |track: &UnicycleTrack| -> Result<(f64, TrackGrad)> {
            scene.objects[k].track = track.clone();
            let i = frame % n;
            frame += 1;
            let out = render_frame(&scene, &gen.cameras[i], None, &opts)?;
            let buf = &out.buffers;
            let img = Image::new(buf.width, buf.height, 3, buf.color.clone())?;
            let (l, g) = loss_image_grad(&img, &targets[i], lambda_ssim)?;
            let up = Upstream { color: g, ..Upstream::default() };
            let mut grads = backward(&scene, &out, &up, 0, 1)?;
            Ok((l, grads.objects.swap_remove(k).track))
        };
        let t = fit_track_coupled(b, fit, Some(&mut coupling))?;
        scene.objects[k].track = t.clone();
        fitted.push(t);
    }
    Ok(fitted)
}

/// Reported PSNR of identical images.
pub const PSNR_CAP: f64 = 100.0;

fn dynamic_noise(cfg: &ExperimentConfig) -> Result<(DynamicNoiseReport, Artifacts)> {
    if cfg.scene.objects == 0 {
        return Err(Error::Invalid("dynamic_noise needs at least one object".into()));
    }
    let tr = &cfg.tracking;
    let mut cells: Vec<TrackingCell> = Vec::new();
    for &level in &tr.levels {
        for &mode in &tr.modes {
            cells.push(TrackingCell {
                level,
                mode,
                e_r: vec![],
                e_t: vec![],
                psnr: vec![],
                ssim: vec![],
                mean_e_r: 0.0,
                mean_e_t: 0.0,
                mean_psnr: 0.0,
                mean_ssim: 0.0,
            });
        }
    }
    let mut art = Artifacts::default();
    for &seed in &cfg.seeds {
        let c = seeded(cfg, seed);
        let gen = gen_scene(&c)?;
        let opts = render_options(Modalities::RGB, false);
        let targets = gen
            .cameras
            .iter()
            .map(|cam| {
                let b = render_frame(&gen.scene, cam, None, &opts)?.buffers;
                Image::new(b.width, b.height, 3, b.color)
            })
            .collect::<Result<Vec<_>>>()?;
        let gt = gen.tracks();
        for (li, &level) in tr.levels.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(li as u64));
            let noise = BoxNoise { level };
            let obs: Vec<_> = gt.iter().map(|t| noise.corrupt(t, &mut rng)).collect();
            for &mode in &tr.modes {
                let fit = FitConfig {
                    mode,
                    smooth: tr.smooth,
                    solver: tr.solver,
                    iterations: tr.iterations,
                    weights: cfg.weights.motion(),
                    ..FitConfig::default()
                };
                let fitted = if tr.photometric && mode != FitMode::None {
                    fit_photometric(&gen, &targets, &obs, &fit, cfg.weights.lambda_ssim)?
                } else {
                    obs.iter().map(|o| fit_track(o, &fit)).collect::<Result<Vec<_>>>()?
                };
                let (mut er, mut et) = (Vec::new(), Vec::new());
                for (f, g) in fitted.iter().zip(&gt) {
                    let pe = pose_errors(
                        &track_poses(f, mode, &g.timestamps)?,
                        &track_poses(g, FitMode::Unicycle, &g.timestamps)?,
                    )?;
                    er.push(pe.mean_rotation);
                    et.push(pe.mean_translation);
                }
                let (p, s) = score_tracks(&gen, &targets, &fitted)?;
                let cell = cells.iter_mut().find(|x| x.level == level && x.mode == mode).expect("cell exists");
                cell.e_r.push(mean(er));
                cell.e_t.push(mean(et));
                cell.psnr.push(p);
                cell.ssim.push(s);
                if seed == cfg.seeds[0] {
                    for (o, t) in fitted.into_iter().enumerate() {
                        art.tracks.push((format!("level{level}_{}_object{o}", mode.name()), t));
                    }
                }
            }
        }
    }
    for c in cells.iter_mut() {
        c.mean_e_r = mean(c.e_r.iter().copied());
        c.mean_e_t = mean(c.e_t.iter().copied());
        c.mean_psnr = mean(c.psnr.iter().copied());
        c.mean_ssim = mean(c.ssim.iter().copied());
    }
    Ok((DynamicNoiseReport { seeds: cfg.seeds.clone(), cells }, art))
}

// Training variants with loss toggles

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: String,
    pub per_seed: Vec<EvalReport>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_depth_rmse: f64,
    pub mean_miou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantsReport {
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantResult>,
}

impl VariantsReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.variant == name)
    }
}

/// Trains every variant on every seed from the same scene and start.
fn run_variants(cfg: &ExperimentConfig, variants: &[(&str, ExperimentConfig)]) -> Result<(VariantsReport, Artifacts)> {
    let mut results: Vec<VariantResult> = variants
        .iter()
        .map(|(n, _)| VariantResult {
            variant: n.to_string(),
            per_seed: vec![],
            mean_psnr: 0.0,
            mean_ssim: 0.0,
            mean_depth_rmse: 0.0,
            mean_miou: 0.0,
        })
        .collect();
    let mut art = Artifacts::default();
    for &seed in &cfg.seeds {
        let gen = gen_scene(&seeded(cfg, seed))?;
        let pgt = gen_pseudo_gt(&gen, &seeded(cfg, seed))?;
        for ((name, vc), res) in variants.iter().zip(results.iter_mut()) {
            let vc = seeded(vc, seed);
            let run = run_training_on(gen.clone(), pgt.clone(), &vc)?;
            if seed == cfg.seeds[0] {
                art.images.push((format!("{name}_heldout"), first_view(&run, &vc)?));
            }
            res.per_seed.push(run.eval);
        }
    }
    for r in results.iter_mut() {
        r.mean_psnr = mean(r.per_seed.iter().map(|e| e.psnr));
        r.mean_ssim = mean(r.per_seed.iter().map(|e| e.ssim));
        r.mean_depth_rmse = mean(r.per_seed.iter().map(|e| e.depth_rmse));
        r.mean_miou = mean(r.per_seed.iter().map(|e| e.miou));
    }
    Ok((VariantsReport { seeds: cfg.seeds.clone(), variants: results }, art))
}

fn static_losses(cfg: &ExperimentConfig) -> Result<(VariantsReport, Artifacts)> {
    let with = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = cfg.clone();
        f(&mut c);
        c
    };
    let variants = [
        ("full", cfg.clone()),
        ("no_semantic", with(&|c| c.toggles.semantic = false)),
        ("no_flow", with(&|c| c.toggles.flow = false)),
        ("no_affine", with(&|c| c.toggles.affine = false)),
    ];
    run_variants(cfg, &variants)
}

fn exposure(cfg: &ExperimentConfig) -> Result<(VariantsReport, Artifacts)> {
    let mut on = cfg.clone();
    on.toggles.affine = true;
    let mut off = cfg.clone();
    off.toggles.affine = false;
    run_variants(cfg, &[("affine", on), ("no_affine", off)])
}

// 3D versus 2D semantic normalization

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloudScore {
    /// Points extracted at the opacity threshold.
    pub points: usize,
    /// mIoU over ground-truth points, each labeled by its nearest
    /// extracted point.
    pub miou: f64,
    pub accuracy: f64,
    pub completeness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxSeed {
    pub seed: u64,
    pub three_d: PointCloudScore,
    pub two_d: PointCloudScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxReport {
    pub opacity_threshold: f64,
    pub per_seed: Vec<SoftmaxSeed>,
    pub mean_miou_3d: f64,
    pub mean_miou_2d: f64,
    pub mean_accuracy_3d: f64,
    pub mean_accuracy_2d: f64,
    /// Seeds where the 3D path has higher mIoU and lower accuracy distance.
    pub wins_3d: usize,
}

/// Opacity threshold of the extracted point clouds.
pub const POINT_THRESHOLD: f64 = 0.5;

fn score_pointcloud(state: &TrainState, gen: &GeneratedScene) -> Result<PointCloudScore> {
    let reference = gen.static_pointcloud();
    let mut only_static = state.scene.clone();
    only_static.objects.clear();
    let pred = extract_semantic_pointcloud(&only_static, POINT_THRESHOLD, None)?;
    if pred.is_empty() {
        return Err(Error::Invalid("no Gaussian above the opacity threshold".into()));
    }
    let pos: Vec<[f64; 3]> = pred.iter().map(|p| p.position).collect();
    let ref_pos: Vec<[f64; 3]> = reference.iter().map(|p| p.position).collect();
    let ref_labels: Vec<u32> = reference.iter().map(|p| p.label).collect();
    let transferred = nearest_labels(&ref_pos, &pred)?;
    let c = chamfer(&pos, &ref_pos)?;
    Ok(PointCloudScore {
        points: pred.len(),
        miou: miou(&transferred, &ref_labels, state.scene.class_count)?.mean,
        accuracy: c.accuracy,
        completeness: c.completeness,
    })
}

fn softmax3d(cfg: &ExperimentConfig) -> Result<(SoftmaxReport, Artifacts)> {
    if cfg.init.floaters == 0 {
        return Err(Error::Invalid("softmax3d needs injected floaters".into()));
    }
    let mut art = Artifacts::default();
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let base = seeded(cfg, seed);
        let gen = gen_scene(&base)?;
        let pgt = gen_pseudo_gt(&gen, &base)?;
        let mut scores = Vec::new();
        for path in [SemanticPath::ThreeD, SemanticPath::TwoD] {
            let mut c = base.clone();
            c.toggles.semantic = true;
            c.toggles.semantic_path = path;
            let run = run_training_on(gen.clone(), pgt.clone(), &c)?;
            scores.push(score_pointcloud(&run.state, &gen)?);
            if seed == cfg.seeds[0] {
                let tag = if path == SemanticPath::ThreeD { "3d" } else { "2d" };
                art.images.push((format!("softmax_{tag}_heldout"), first_view(&run, &c)?));
            }
        }
        let two_d = scores.pop().expect("two runs");
        let three_d = scores.pop().expect("two runs");
        per_seed.push(SoftmaxSeed { seed, three_d, two_d });
    }
    let wins_3d =
        per_seed.iter().filter(|s| s.three_d.miou > s.two_d.miou && s.three_d.accuracy < s.two_d.accuracy).count();
    Ok((
        SoftmaxReport {
            opacity_threshold: POINT_THRESHOLD,
            mean_miou_3d: mean(per_seed.iter().map(|s| s.three_d.miou)),
            mean_miou_2d: mean(per_seed.iter().map(|s| s.two_d.miou)),
            mean_accuracy_3d: mean(per_seed.iter().map(|s| s.three_d.accuracy)),
            mean_accuracy_2d: mean(per_seed.iter().map(|s| s.two_d.accuracy)),
            wins_3d,
            per_seed,
        },
        art,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig { width: 40, height: 30, seeds: vec![0, 1], ..Default::default() };
        c.camera.frames = 6;
        c.scene.ground = 100;
        c.scene.per_building = 15;
        c.scene.backdrop = 30;
        c.scene.per_object = 10;
        c.training.iterations = 5;
        c.tracking.iterations = 200;
        c
    }

    #[test]
    fn names_roundtrip() {
        for a in AblationName::ALL {
            assert_eq!(AblationName::parse(a.name()).unwrap(), a);
        }
        assert_eq!(AblationName::parse("nope").unwrap_err().kind(), "usage");
    }

    #[test]
    fn zero_noise_tracking_ties_at_zero() {
        let mut c = tiny();
        c.tracking.levels = vec![0.0];
        // Turn-rate switches make the smoothness term nonzero on ground truth.
        c.scene.turn_segments = 1;
        let (r, art) = dynamic_noise(&c).unwrap();
        assert_eq!(r.cells.len(), 3);
        for cell in &r.cells {
            assert!(cell.mean_e_t < 1e-6, "{:?}", cell);
            assert!(cell.mean_e_r < 1e-6, "{:?}", cell);
            assert_eq!(cell.mean_psnr, PSNR_CAP);
        }
        assert_eq!(art.tracks.len(), 3);
    }

    #[test]
    fn variant_reports_have_one_entry_per_seed() {
        let (r, art) = exposure(&tiny()).unwrap();
        assert_eq!(r.variants.len(), 2);
        assert!(r.variants.iter().all(|v| v.per_seed.len() == 2));
        assert_eq!(art.images.len(), 2);
    }

    #[test]
    fn softmax_requires_floaters() {
        assert_eq!(softmax3d(&tiny()).unwrap_err().kind(), "invalid");
        let mut c = tiny();
        c.init.floaters = 5;
        let (r, _) = softmax3d(&c).unwrap();
        assert_eq!(r.per_seed.len(), 2);
        assert!(r.per_seed.iter().all(|s| s.three_d.points > 0 && s.two_d.points > 0));
    }
}
