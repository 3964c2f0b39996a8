//! Joint optimization of a scene against pseudo ground truth, plus held-out
//! evaluation.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SemanticPath};
use super::pseudo_gt::{PseudoGt, COVERED_ALPHA};
use super::render_options;
use super::scene_gen::{label_logits, GeneratedScene, BACKDROP_COLOR, CLASS_BACKDROP};
use crate::compositor::Modalities;
use crate::diff::{backward_into, Adam, ParamClass, ParamGrads, Schedule, Upstream};
use crate::error::{Error, Result};
use crate::losses::{loss_flow_grad, loss_image_grad, loss_semantic_grad, LossBreakdown};
use crate::metrics::{argmax, depth_error, miou, psnr, ssim};
use crate::raster::Image;
use crate::render::{render_frame, RenderOptions};
use crate::scene::{Exposure, FrameCamera, Gaussian3D, SceneGraph};
use crate::sh;
use crate::unicycle::{loss_smooth, loss_track, loss_unicycle, motion_loss, FitConfig, FitMode};

/// Training frames and held-out frames. With holdout, odd frames are held
/// out; without it, every frame is used for both.
pub fn split_frames(frames: usize, holdout: bool) -> (Vec<usize>, Vec<usize>) {
    if !holdout {
        return ((0..frames).collect(), (0..frames).collect());
    }
    ((0..frames).step_by(2).collect(), (1..frames).step_by(2).collect())
}

/// Scene and cameras being optimized.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub scene: SceneGraph,
    pub cameras: Vec<FrameCamera>,
}

/// Starting point of training: ground truth perturbed per the init spec.
pub fn init_state(gen: &GeneratedScene, pgt: &PseudoGt, cfg: &ExperimentConfig) -> Result<TrainState> {
    let init = &cfg.init;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1417_0b5e);
    let mut scene = gen.scene.clone();
    let normal = |s: f64| Normal::new(0.0, s.max(0.0)).expect("finite sigma");
    let (pos, ray, col, ls, lg) = (
        normal(init.position_sigma),
        normal(init.ray_sigma),
        normal(init.color_sigma),
        normal(init.log_scale_sigma),
        normal(init.logit_sigma),
    );
    let origin = gen.cameras[0].center();
    for g in scene.static_gaussians.iter_mut() {
        let dir = (g.mu - origin).normalize();
        g.mu += Vector3::from_fn(|_, _| pos.sample(&mut rng)) + dir * ray.sample(&mut rng);
        for c in g.sh[0].iter_mut() {
            *c += col.sample(&mut rng);
        }
        g.log_scale += Vector3::from_fn(|_, _| ls.sample(&mut rng));
        for l in g.logits.iter_mut() {
            *l += lg.sample(&mut rng);
        }
    }
    let x_far = GeneratedScene::backdrop_x(&cfg.camera);
    let classes = scene.class_count;
    for _ in 0..init.floaters {
        let mu = Vector3::new(
            rng.random_range(x_far - 10.0..x_far - 3.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(0.5..5.0),
        );
        let mut wrong = rng.random_range(0..classes as u32 - 1);
        if wrong >= CLASS_BACKDROP {
            wrong += 1;
        }
        let mut g = Gaussian3D::isotropic(mu, 0.6, init.floater_opacity, BACKDROP_COLOR, label_logits(classes, wrong));
        g.sh = vec![[0.0; 3]; sh::basis_len(cfg.scene.sh_degree)];
        g.sh[0] = sh::dc_from_rgb(BACKDROP_COLOR);
        scene.static_gaussians.push(g);
    }
    if init.tracks_from_boxes {
        for (o, b) in scene.objects.iter_mut().zip(&pgt.boxes) {
            o.track = b.to_track()?;
        }
    }
    let cameras = gen.cameras.iter().map(|c| FrameCamera { exposure: Exposure::identity(), ..c.clone() }).collect();
    Ok(TrainState { scene, cameras })
}

fn train_options(cfg: &ExperimentConfig, with_flow: bool, record_tape: bool) -> RenderOptions {
    let t = &cfg.toggles;
    let semantic = t.semantic && cfg.weights.lambda_s > 0.0;
    let modalities = Modalities {
        rgb: true,
        semantic: semantic && t.semantic_path == SemanticPath::ThreeD,
        semantic_2d: semantic && t.semantic_path == SemanticPath::TwoD,
        depth: false,
        flow: with_flow && t.flow && cfg.weights.lambda_f > 0.0,
    };
    RenderOptions { record_tape, ..render_options(modalities, t.affine) }
}

fn motion_config(cfg: &ExperimentConfig) -> FitConfig {
    FitConfig {
        mode: FitMode::Unicycle,
        weights: cfg.weights.motion(),
        smooth: cfg.tracking.smooth,
        ..FitConfig::default()
    }
}

/// Image-space losses of frame `i` and, when `grads` is given, their
/// weighted gradient accumulated into it.
pub fn frame_loss(
    state: &TrainState,
    pgt: &PseudoGt,
    cfg: &ExperimentConfig,
    i: usize,
    grads: Option<&mut ParamGrads>,
) -> Result<LossBreakdown> {
    let target = &pgt.frames[i];
    let flow_cam = target.flow_to.map(|j| &state.cameras[j]);
    let opts = train_options(cfg, flow_cam.is_some(), grads.is_some());
    let out = render_frame(&state.scene, &state.cameras[i], flow_cam, &opts)?;
    let b = &out.buffers;
    let w = &cfg.weights;
    let color = if opts.exposure { &b.color_exposed } else { &b.color };
    let rendered = Image::new(b.width, b.height, 3, color.clone())?;
    let (image, g_img) = loss_image_grad(&rendered, &target.image, w.lambda_ssim)?;
    let mut up = Upstream { color: g_img, ..Upstream::default() };
    let mut lb = LossBreakdown { image, ..LossBreakdown::default() };
    let m = opts.modalities;
    if m.semantic || m.semantic_2d {
        let probs = if m.semantic { &b.semantic } else { &b.semantic_2dnorm };
        let (l, mut g) = loss_semantic_grad(probs, b.class_count, &target.labels)?;
        g.iter_mut().for_each(|v| *v *= w.lambda_s);
        lb.semantic = l;
        if m.semantic {
            up.semantic = g;
        } else {
            up.semantic_2d = g;
        }
    }
    if m.flow {
        let (l, mut g) = loss_flow_grad(&b.flow, &target.flow, &target.flow_valid)?;
        g.iter_mut().for_each(|v| *v *= w.lambda_f);
        lb.flow = l;
        up.flow = g;
    }
    if let Some(grads) = grads {
        backward_into(&state.scene, &out, &up, i, grads)?;
    }
    Ok(lb)
}

/// Motion losses of every object track against its noisy boxes.
fn motion_breakdown(state: &TrainState, pgt: &PseudoGt, cfg: &ExperimentConfig) -> Result<LossBreakdown> {
    let mut lb = LossBreakdown::default();
    for (o, b) in state.scene.objects.iter().zip(&pgt.boxes) {
        lb.track += loss_track(&o.track, b)?;
        lb.unicycle += loss_unicycle(&o.track);
        lb.smooth += loss_smooth(&o.track, cfg.tracking.smooth);
    }
    Ok(lb)
}

/// Total training loss: image-space losses averaged over the training
/// frames, plus motion losses when tracks are trained.
pub fn training_loss(state: &TrainState, pgt: &PseudoGt, cfg: &ExperimentConfig) -> Result<LossBreakdown> {
    let (train, _) = split_frames(state.cameras.len(), cfg.training.holdout);
    let mut lb = LossBreakdown::default();
    for &i in &train {
        lb.add(&frame_loss(state, pgt, cfg, i, None)?);
    }
    let k = 1.0 / train.len() as f64;
    lb.image *= k;
    lb.semantic *= k;
    lb.flow *= k;
    if cfg.training.train_tracks {
        lb.add(&motion_breakdown(state, pgt, cfg)?);
    }
    Ok(lb)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Weighted loss of the sampled frame at each iteration.
    pub losses: Vec<f64>,
}

/// Runs `cfg.training.iterations` Adam steps, one random training frame per
/// step.
pub fn train(state: &mut TrainState, pgt: &PseudoGt, cfg: &ExperimentConfig) -> Result<TrainLog> {
    let (train_frames, _) = split_frames(state.cameras.len(), cfg.training.holdout);
    let t = &cfg.training;
    let rates = t.rates.only(|c| match c {
        ParamClass::ExposureA | ParamClass::ExposureB => cfg.toggles.affine,
        c if c.is_track() => t.train_tracks,
        _ => true,
    });
    let schedule = Schedule { rates, track_decay: t.track_decay };
    let motion = motion_config(cfg);
    let mut adam = Adam::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a41_4e00);
    let mut log = TrainLog::default();
    for it in 0..t.iterations {
        let i = train_frames[rng.random_range(0..train_frames.len())];
        let mut grads = ParamGrads::zeros(&state.scene, state.cameras.len());
        let mut lb = frame_loss(state, pgt, cfg, i, Some(&mut grads))?;
        if t.train_tracks {
            for (o, (obj, b)) in state.scene.objects.iter().zip(&pgt.boxes).enumerate() {
                let (_, g) = motion_loss(&obj.track, b, &motion)?;
                let tg = &mut grads.objects[o].track;
                for (a, v) in tg.states.iter_mut().zip(&g.states) {
                    (0..3).for_each(|c| a[c] += v[c]);
                }
                for (a, v) in tg.heights.iter_mut().zip(&g.heights) {
                    *a += v;
                }
                for (a, v) in tg.velocities.iter_mut().zip(&g.velocities) {
                    (0..2).for_each(|c| a[c] += v[c]);
                }
            }
            lb.add(&motion_breakdown(state, pgt, cfg)?);
        }
        let total = lb.total(&cfg.weights);
        if !total.is_finite() {
            return Err(Error::Divergence { iteration: it, detail: format!("loss {total}") });
        }
        log.losses.push(total);
        adam.step(&mut state.scene, &mut state.cameras, &grads, &schedule, it)?;
    }
    Ok(log)
}

/// Exposure of held-out frame `i`, interpolated between the nearest training
/// frames on either side.
pub fn interpolated_exposure(cameras: &[FrameCamera], train: &[usize], i: usize) -> Exposure {
    let before = train.iter().rev().find(|j| **j <= i);
    let after = train.iter().find(|j| **j >= i);
    match (before, after) {
        (Some(&a), Some(&b)) if a == b => cameras[a].exposure.clone(),
        (Some(&a), Some(&b)) => cameras[a].exposure.lerp(&cameras[b].exposure, (i - a) as f64 / (b - a) as f64),
        (Some(&a), None) | (None, Some(&a)) => cameras[a].exposure.clone(),
        (None, None) => Exposure::identity(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<usize>,
    pub psnr: f64,
    pub ssim: f64,
    /// Depth RMSE over all held-out pixels with a reference depth.
    pub depth_rmse: f64,
    pub depth_missing: usize,
    /// Mean IoU of the rendered label maps against the clean labels.
    pub miou: f64,
}

/// Renders `frames` and returns the exposed color of each.
pub fn render_views(state: &TrainState, cfg: &ExperimentConfig, frames: &[usize]) -> Result<Vec<Image>> {
    let (train, _) = split_frames(state.cameras.len(), cfg.training.holdout);
    frames
        .iter()
        .map(|&i| {
            let out = render_eval(state, cfg, &train, i)?;
            let b = &out.buffers;
            Image::new(b.width, b.height, 3, if cfg.toggles.affine { b.color_exposed.clone() } else { b.color.clone() })
        })
        .collect()
}

fn render_eval(
    state: &TrainState,
    cfg: &ExperimentConfig,
    train: &[usize],
    i: usize,
) -> Result<crate::render::RenderOutput> {
    let mut cam = state.cameras[i].clone();
    if !train.contains(&i) {
        cam.exposure = interpolated_exposure(&state.cameras, train, i);
    }
    let semantic_2d = cfg.toggles.semantic_path == SemanticPath::TwoD;
    let opts = render_options(
        Modalities { semantic: !semantic_2d, semantic_2d, flow: false, ..Modalities::ALL },
        cfg.toggles.affine,
    );
    render_frame(&state.scene, &cam, None, &opts)
}

/// Held-out image, depth, and semantic metrics.
pub fn evaluate(state: &TrainState, pgt: &PseudoGt, cfg: &ExperimentConfig) -> Result<EvalReport> {
    let (train, test) = split_frames(state.cameras.len(), cfg.training.holdout);
    let (mut p, mut s) = (0.0, 0.0);
    let (mut sq, mut count, mut missing) = (0.0, 0usize, 0usize);
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    for &i in &test {
        let out = render_eval(state, cfg, &train, i)?;
        let b = &out.buffers;
        let color = if cfg.toggles.affine { &b.color_exposed } else { &b.color };
        let img = Image::new(b.width, b.height, 3, color.clone())?;
        let target = &pgt.frames[i];
        p += psnr(&img, &target.image)?;
        s += ssim(&img, &target.image)?;
        let d = depth_error(&b.depth, &target.depth)?;
        sq += d.rmse * d.rmse * d.evaluated as f64;
        count += d.evaluated;
        missing += d.missing;
        let probs = if cfg.toggles.semantic_path == SemanticPath::TwoD { &b.semantic_2dnorm } else { &b.semantic };
        let k = b.class_count;
        for (px, l) in target.clean_labels.iter().enumerate() {
            if let Some(l) = l {
                let covered = b.accum_alpha[px] >= COVERED_ALPHA;
                pred.push(if covered {
                    argmax(&probs[px * k..(px + 1) * k]) as u32
                } else {
                    CLASS_BACKDROP.min(k as u32 - 1)
                });
                gt.push(*l);
            }
        }
    }
    let n = test.len() as f64;
    Ok(EvalReport {
        frames: test,
        psnr: p / n,
        ssim: s / n,
        depth_rmse: if count == 0 { 0.0 } else { (sq / count as f64).sqrt() },
        depth_missing: missing,
        miou: miou(&pred, &gt, state.scene.class_count)?.mean,
    })
}
