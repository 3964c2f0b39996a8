//! Motion losses on unicycle tracks and track rectification against noisy
//! per-frame boxes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diff::grads::TrackGrad;
use crate::error::{Error, Result};
use crate::scene::track::propagate_with_jacobian;
use crate::scene::{PlanarState, Pose, UnicycleTrack};

/// Residual magnitudes at or below this are treated as exactly zero when
/// taking subgradients, so that feasible tracks are fixed points.
pub const ZERO_RESIDUAL: f64 = 1e-9;

/// Noisy per-frame box poses with validity flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyBoxTrack {
    pub timestamps: Vec<f64>,
    pub boxes: Vec<Pose>,
    pub valid: Vec<bool>,
}

impl NoisyBoxTrack {
    pub fn new(timestamps: Vec<f64>, boxes: Vec<Pose>, valid: Vec<bool>) -> Result<Self> {
        let obs = Self { timestamps, boxes, valid };
        obs.validate()?;
        Ok(obs)
    }

    /// Every stored state of `track` as a valid observation.
    pub fn from_track(track: &UnicycleTrack) -> Self {
        let boxes = (0..track.len())
            .map(|i| {
                let s = track.states[i];
                Pose { x: s.x, y: s.y, z: track.heights[i], theta: s.theta }
            })
            .collect();
        Self { timestamps: track.timestamps.clone(), boxes, valid: vec![true; track.len()] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.boxes.len() != self.timestamps.len() || self.valid.len() != self.timestamps.len() {
            return Err(Error::Invalid("box track fields have different lengths".into()));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("box timestamps must be strictly increasing".into()));
        }
        if self.valid.iter().filter(|v| **v).count() < 2 {
            return Err(Error::Invalid("need at least two valid observations".into()));
        }
        Ok(())
    }

    /// Track built from the valid observations verbatim, with velocities from
    /// finite differences.
    pub fn to_track(&self) -> Result<UnicycleTrack> {
        let idx: Vec<usize> = (0..self.timestamps.len()).filter(|&i| self.valid[i]).collect();
        UnicycleTrack::from_states(
            idx.iter().map(|&i| self.timestamps[i]).collect(),
            idx.iter().map(|&i| PlanarState::new(self.boxes[i].x, self.boxes[i].y, self.boxes[i].theta)).collect(),
            idx.iter().map(|&i| self.boxes[i].z).collect(),
        )
    }
}

/// Which sequence the smoothness loss takes second differences of, besides `v`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothTerm {
    /// Heading, as the loss is written.
    #[default]
    Theta,
    /// Angular velocity, as the prose describes it.
    Omega,
}

/// One scalar residual with its sparse gradient over the flat track vector.
#[derive(Clone, Debug)]
struct Residual {
    value: f64,
    entries: Vec<(usize, f64)>,
}

/// Flat layout: states `3i + c`, heights `3n + i`, velocities `4n + 2i + c`.
fn idx_state(i: usize, c: usize) -> usize {
    3 * i + c
}

fn idx_velocity(n: usize, i: usize, c: usize) -> usize {
    4 * n + 2 * i + c
}

pub fn track_to_flat(t: &UnicycleTrack) -> Vec<f64> {
    let mut v = Vec::with_capacity(6 * t.len());
    for s in &t.states {
        v.extend_from_slice(&[s.x, s.y, s.theta]);
    }
    v.extend_from_slice(&t.heights);
    for vel in &t.velocities {
        v.extend_from_slice(&[vel.v, vel.omega]);
    }
    v
}

pub fn track_from_flat(t: &mut UnicycleTrack, v: &[f64]) {
    let n = t.len();
    for (i, s) in t.states.iter_mut().enumerate() {
        s.x = v[3 * i];
        s.y = v[3 * i + 1];
        s.theta = v[3 * i + 2];
    }
    t.heights.copy_from_slice(&v[3 * n..4 * n]);
    for (i, vel) in t.velocities.iter_mut().enumerate() {
        vel.v = v[4 * n + 2 * i];
        vel.omega = v[4 * n + 2 * i + 1];
    }
}

fn grad_from_flat(t: &UnicycleTrack, v: &[f64]) -> TrackGrad {
    let n = t.len();
    TrackGrad {
        states: (0..n).map(|i| [v[3 * i], v[3 * i + 1], v[3 * i + 2]]).collect(),
        heights: v[3 * n..4 * n].to_vec(),
        velocities: (0..t.velocities.len()).map(|i| [v[4 * n + 2 * i], v[4 * n + 2 * i + 1]]).collect(),
    }
}

fn grad_to_flat(g: &TrackGrad) -> Vec<f64> {
    let mut v = Vec::new();
    for s in &g.states {
        v.extend_from_slice(s);
    }
    v.extend_from_slice(&g.heights);
    for s in &g.velocities {
        v.extend_from_slice(s);
    }
    v
}

fn track_residuals(track: &UnicycleTrack, obs: &NoisyBoxTrack) -> Result<Vec<Residual>> {
    let mut out = Vec::new();
    for k in 0..obs.timestamps.len() {
        if !obs.valid[k] {
            continue;
        }
        if let Some(i) = track.index_of(obs.timestamps[k]) {
            let s = track.states[i];
            out.push(Residual { value: s.x - obs.boxes[k].x, entries: vec![(idx_state(i, 0), 1.0)] });
            out.push(Residual { value: s.y - obs.boxes[k].y, entries: vec![(idx_state(i, 1), 1.0)] });
        }
    }
    if out.is_empty() {
        return Err(Error::Usage("no valid observation shares a timestamp with the track".into()));
    }
    Ok(out)
}

fn unicycle_residuals(track: &UnicycleTrack) -> Vec<Residual> {
    let n = track.len();
    let mut out = Vec::with_capacity(3 * n);
    for t in 0..n.saturating_sub(1) {
        let tau = track.timestamps[t + 1] - track.timestamps[t];
        let (next, j) = propagate_with_jacobian(&track.states[t], &track.velocities[t], tau);
        let s1 = track.states[t + 1];
        let values = [s1.x - next.x, s1.y - next.y, s1.theta - next.theta];
        for (c, value) in values.into_iter().enumerate() {
            let mut entries = vec![(idx_state(t + 1, c), 1.0)];
            for k in 0..3 {
                let d = j.wrt_state[(c, k)];
                if d != 0.0 {
                    entries.push((idx_state(t, k), -d));
                }
            }
            for k in 0..2 {
                let d = j.wrt_velocity[(c, k)];
                if d != 0.0 {
                    entries.push((idx_velocity(n, t, k), -d));
                }
            }
            out.push(Residual { value, entries });
        }
    }
    out
}

fn smooth_residuals(track: &UnicycleTrack, term: SmoothTerm) -> Vec<Residual> {
    let n = track.len();
    let m = track.velocities.len();
    let mut out = Vec::new();
    for i in 1..m.saturating_sub(1) {
        let v = |k: usize| track.velocities[k].v;
        out.push(Residual {
            value: v(i + 1) + v(i - 1) - 2.0 * v(i),
            entries: vec![
                (idx_velocity(n, i + 1, 0), 1.0),
                (idx_velocity(n, i - 1, 0), 1.0),
                (idx_velocity(n, i, 0), -2.0),
            ],
        });
    }
    match term {
        SmoothTerm::Theta => {
            for i in 1..n.saturating_sub(1) {
                let th = |k: usize| track.states[k].theta;
                out.push(Residual {
                    value: th(i + 1) + th(i - 1) - 2.0 * th(i),
                    entries: vec![(idx_state(i + 1, 2), 1.0), (idx_state(i - 1, 2), 1.0), (idx_state(i, 2), -2.0)],
                });
            }
        }
        SmoothTerm::Omega => {
            for i in 1..m.saturating_sub(1) {
                let w = |k: usize| track.velocities[k].omega;
                out.push(Residual {
                    value: w(i + 1) + w(i - 1) - 2.0 * w(i),
                    entries: vec![
                        (idx_velocity(n, i + 1, 1), 1.0),
                        (idx_velocity(n, i - 1, 1), 1.0),
                        (idx_velocity(n, i, 1), -2.0),
                    ],
                });
            }
        }
    }
    out
}

fn l1(res: &[Residual]) -> f64 {
    res.iter().map(|r| r.value.abs()).sum()
}

fn sign(v: f64) -> f64 {
    if v.abs() <= ZERO_RESIDUAL {
        0.0
    } else {
        v.signum()
    }
}

fn l1_grad(res: &[Residual], weight: f64, out: &mut [f64]) {
    for r in res {
        let s = weight * sign(r.value);
        if s != 0.0 {
            for (i, d) in &r.entries {
                out[*i] += s * d;
            }
        }
    }
}

/// `sum_t |x_t - x^_t| + |y_t - y^_t|` over valid observations.
pub fn loss_track(track: &UnicycleTrack, obs: &NoisyBoxTrack) -> Result<f64> {
    Ok(l1(&track_residuals(track, obs)?))
}

/// Sum of absolute unicycle-update residuals over every interval.
pub fn loss_unicycle(track: &UnicycleTrack) -> f64 {
    l1(&unicycle_residuals(track))
}

/// Sum of absolute second differences of `v` and of `theta` (or `omega`).
pub fn loss_smooth(track: &UnicycleTrack, term: SmoothTerm) -> f64 {
    l1(&smooth_residuals(track, term))
}

/// Weights of the three motion losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionWeights {
    pub lambda_t: f64,
    pub lambda_uni: f64,
    pub lambda_reg: f64,
}

impl Default for MotionWeights {
    fn default() -> Self {
        Self { lambda_t: 0.1, lambda_uni: 0.1, lambda_reg: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Observations used verbatim.
    #[default]
    None,
    /// States optimized independently, no motion model.
    PerFrame,
    /// States and velocities optimized under all three motion losses.
    Unicycle,
}

impl FitMode {
    pub const ALL: [FitMode; 3] = [FitMode::None, FitMode::PerFrame, FitMode::Unicycle];

    pub fn name(&self) -> &'static str {
        match self {
            FitMode::None => "none",
            FitMode::PerFrame => "per_frame",
            FitMode::Unicycle => "unicycle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FitMode::None),
            "per_frame" => Ok(FitMode::PerFrame),
            "unicycle" => Ok(FitMode::Unicycle),
            other => Err(Error::Usage(format!("unknown fit mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Adam on the (sub)gradient of the absolute-value losses.
    #[default]
    GradientDescent,
    /// Levenberg-Marquardt on Huber-smoothed residuals; only loss-decreasing
    /// steps are accepted.
    GaussNewton,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub mode: FitMode,
    pub weights: MotionWeights,
    pub smooth: SmoothTerm,
    pub solver: Solver,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Ratio of the final to the initial learning rate (exponential decay).
    pub final_lr_ratio: f64,
    pub huber_delta: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            mode: FitMode::Unicycle,
            weights: MotionWeights::default(),
            smooth: SmoothTerm::Theta,
            solver: Solver::GradientDescent,
            iterations: 3000,
            learning_rate: 0.05,
            final_lr_ratio: 1e-3,
            huber_delta: 0.1,
        }
    }
}

/// Weighted motion loss for a mode and its gradient.
pub fn motion_loss(track: &UnicycleTrack, obs: &NoisyBoxTrack, cfg: &FitConfig) -> Result<(f64, TrackGrad)> {
    let mut g = vec![0.0; 6 * track.len() - 2];
    let w = cfg.weights;
    let rt = track_residuals(track, obs)?;
    let mut loss = w.lambda_t * l1(&rt);
    l1_grad(&rt, w.lambda_t, &mut g);
    if cfg.mode == FitMode::Unicycle {
        let ru = unicycle_residuals(track);
        let rs = smooth_residuals(track, cfg.smooth);
        loss += w.lambda_uni * l1(&ru) + w.lambda_reg * l1(&rs);
        l1_grad(&ru, w.lambda_uni, &mut g);
        l1_grad(&rs, w.lambda_reg, &mut g);
    }
    Ok((loss, grad_from_flat(track, &g)))
}

/// Extra loss coupled into the fit (e.g. rendering losses), returning its
/// value and gradient with respect to the track.
pub type Coupling<'a> = dyn FnMut(&UnicycleTrack) -> Result<(f64, TrackGrad)> + 'a;

/// Rectifies a noisy box track.
pub fn fit_track(obs: &NoisyBoxTrack, cfg: &FitConfig) -> Result<UnicycleTrack> {
    fit_track_coupled(obs, cfg, None)
}

pub fn fit_track_coupled(
    obs: &NoisyBoxTrack,
    cfg: &FitConfig,
    mut coupling: Option<&mut Coupling>,
) -> Result<UnicycleTrack> {
    obs.validate()?;
    let mut track = obs.to_track()?;
    if cfg.mode == FitMode::None {
        return Ok(track);
    }
    if cfg.solver == Solver::GaussNewton && coupling.is_none() {
        gauss_newton(&mut track, obs, cfg)?;
    } else {
        adam_fit(&mut track, obs, cfg, &mut coupling)?;
    }
    if cfg.mode == FitMode::PerFrame {
        // Velocities carry no information in this mode; keep them consistent
        // with the fitted states.
        track = UnicycleTrack::from_states(track.timestamps.clone(), track.states.clone(), track.heights.clone())?;
    }
    Ok(track)
}

fn adam_fit(
    track: &mut UnicycleTrack,
    obs: &NoisyBoxTrack,
    cfg: &FitConfig,
    coupling: &mut Option<&mut Coupling>,
) -> Result<()> {
    let n = track_to_flat(track).len();
    let (b1, b2, eps) = (0.9, 0.999, 1e-12);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let decay = if cfg.iterations > 1 { cfg.final_lr_ratio.powf(1.0 / (cfg.iterations - 1) as f64) } else { 1.0 };
    let mut lr = cfg.learning_rate;
    for it in 0..cfg.iterations {
        let (mut loss, grad) = motion_loss(track, obs, cfg)?;
        let mut g = grad_to_flat(&grad);
        if let Some(c) = coupling.as_mut() {
            let (l, cg) = c(track)?;
            loss += l;
            for (a, b) in g.iter_mut().zip(grad_to_flat(&cg)) {
                *a += b;
            }
        }
        if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { iteration: it, detail: format!("motion loss {loss}") });
        }
        let mut p = track_to_flat(track);
        let t = (it + 1) as i32;
        let (c1, c2) = (1.0 - f64::powi(b1, t), 1.0 - f64::powi(b2, t));
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
        track_from_flat(track, &p);
        lr *= decay;
    }
    Ok(())
}

fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r / delta
    } else {
        r.abs() - 0.5 * delta
    }
}

/// All weighted residuals of the active losses.
fn weighted_residuals(track: &UnicycleTrack, obs: &NoisyBoxTrack, cfg: &FitConfig) -> Result<Vec<(f64, Residual)>> {
    let w = cfg.weights;
    let mut all: Vec<(f64, Residual)> = track_residuals(track, obs)?.into_iter().map(|r| (w.lambda_t, r)).collect();
    if cfg.mode == FitMode::Unicycle {
        all.extend(unicycle_residuals(track).into_iter().map(|r| (w.lambda_uni, r)));
        all.extend(smooth_residuals(track, cfg.smooth).into_iter().map(|r| (w.lambda_reg, r)));
    }
    Ok(all)
}

/// Huber-smoothed total motion loss.
pub fn huber_motion_loss(track: &UnicycleTrack, obs: &NoisyBoxTrack, cfg: &FitConfig) -> Result<f64> {
    Ok(weighted_residuals(track, obs, cfg)?.iter().map(|(w, r)| w * huber(r.value, cfg.huber_delta)).sum())
}

fn gauss_newton(track: &mut UnicycleTrack, obs: &NoisyBoxTrack, cfg: &FitConfig) -> Result<()> {
    let n = track_to_flat(track).len();
    let mut lambda = 1e-3;
    let mut loss = huber_motion_loss(track, obs, cfg)?;
    for it in 0..cfg.iterations {
        let res = weighted_residuals(track, obs, cfg)?;
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for (w, r) in &res {
            // Iteratively reweighted least squares for the Huber penalty.
            let irls = if r.value.abs() <= cfg.huber_delta { 1.0 / cfg.huber_delta } else { 1.0 / r.value.abs() };
            let wr = w * irls;
            for (i, di) in &r.entries {
                b[*i] += wr * di * r.value;
                for (j, dj) in &r.entries {
                    h[(*i, *j)] += wr * di * dj;
                }
            }
        }
        let mut accepted = false;
        for _ in 0..12 {
            let mut a = h.clone();
            for i in 0..n {
                a[(i, i)] += lambda * (h[(i, i)] + 1e-9);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&b))) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = track.clone();
            let p: Vec<f64> = track_to_flat(track).iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            track_from_flat(&mut trial, &p);
            let trial_loss = huber_motion_loss(&trial, obs, cfg)?;
            if !trial_loss.is_finite() {
                return Err(Error::Divergence { iteration: it, detail: "non-finite trial loss".into() });
            }
            if trial_loss <= loss {
                *track = trial;
                let gain = loss - trial_loss;
                loss = trial_loss;
                lambda = (lambda * 0.3).max(1e-9);
                accepted = true;
                if gain <= 1e-14 * loss.max(1e-300) {
                    return Ok(());
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            return Ok(());
        }
    }
    Ok(())
}

/// Rotation and translation errors between two poses.
pub fn pose_error(pred: &Pose, gt: &Pose) -> (f64, f64) {
    let r = pred.rotation_matrix() * gt.rotation_matrix().transpose();
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    (c.acos(), (pred.translation() - gt.translation()).norm())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    pub per_frame: Vec<(f64, f64)>,
    pub mean_rotation: f64,
    pub mean_translation: f64,
}

/// Per-frame and mean `(e_R, e_t)` over aligned pose lists.
pub fn pose_errors(pred: &[Pose], gt: &[Pose]) -> Result<PoseErrors> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Dimension(format!("{} predicted vs {} ground-truth poses", pred.len(), gt.len())));
    }
    let per_frame: Vec<(f64, f64)> = pred.iter().zip(gt).map(|(p, g)| pose_error(p, g)).collect();
    let n = per_frame.len() as f64;
    Ok(PoseErrors {
        mean_rotation: per_frame.iter().map(|e| e.0).sum::<f64>() / n,
        mean_translation: per_frame.iter().map(|e| e.1).sum::<f64>() / n,
        per_frame,
    })
}

/// Poses of a fitted track at `timestamps`: propagated through the motion
/// model for the unicycle mode, linearly interpolated otherwise.
pub fn track_poses(track: &UnicycleTrack, mode: FitMode, timestamps: &[f64]) -> Result<Vec<Pose>> {
    timestamps
        .iter()
        .map(|&t| match mode {
            FitMode::Unicycle => track.pose_at(t),
            _ => track.pose_at_linear(t),
        })
        .collect()
}

/// Box noise calibrated so that, at level 1.0, the mean translation
/// perturbation is 0.5 m and the mean heading perturbation 5 degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxNoise {
    pub level: f64,
}

impl BoxNoise {
    /// Per-axis standard deviation of the planar position noise (meters).
    pub fn sigma_xy(&self) -> f64 {
        self.level * 0.5 / (std::f64::consts::PI / 2.0).sqrt()
    }

    /// Standard deviation of the heading noise (radians).
    pub fn sigma_theta(&self) -> f64 {
        self.level * 5f64.to_radians() / (2.0 / std::f64::consts::PI).sqrt()
    }

    /// Noisy observations of `gt` at its stored timestamps.
    pub fn corrupt(&self, gt: &UnicycleTrack, rng: &mut impl Rng) -> NoisyBoxTrack {
        let mut obs = NoisyBoxTrack::from_track(gt);
        if self.level > 0.0 {
            let nxy = Normal::new(0.0, self.sigma_xy()).expect("finite sigma");
            let nth = Normal::new(0.0, self.sigma_theta()).expect("finite sigma");
            for b in &mut obs.boxes {
                b.x += nxy.sample(rng);
                b.y += nxy.sample(rng);
                b.theta += nth.sample(rng);
            }
        }
        obs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Velocity;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn curved(n: usize) -> UnicycleTrack {
        let vels = (0..n - 1).map(|i| Velocity::new(0.8 + 0.01 * i as f64, 0.05 - 0.003 * i as f64)).collect();
        UnicycleTrack::from_controls(
            PlanarState::new(1.0, -2.0, 0.3),
            vec![0.5; n],
            (0..n).map(|i| i as f64).collect(),
            vels,
        )
        .unwrap()
    }

    #[test]
    fn track_loss_examples() {
        let gt = curved(5);
        let mut obs = NoisyBoxTrack::from_track(&gt);
        assert_eq!(loss_track(&gt, &obs).unwrap(), 0.0);
        obs.boxes[2].x += 3.0;
        obs.boxes[2].y -= 4.0;
        assert_relative_eq!(loss_track(&gt, &obs).unwrap(), 7.0, epsilon = 1e-12);
        obs.valid[2] = false;
        assert_eq!(loss_track(&gt, &obs).unwrap(), 0.0);
    }

    #[test]
    fn track_loss_without_overlap_is_usage_error() {
        let gt = curved(3);
        let mut obs = NoisyBoxTrack::from_track(&gt);
        obs.timestamps = vec![10.0, 11.0, 12.0];
        assert_eq!(loss_track(&gt, &obs).unwrap_err().kind(), "usage");
    }

    #[test]
    fn unicycle_loss_examples() {
        let gt = curved(10);
        assert!(loss_unicycle(&gt) < 1e-12);
        let straight = UnicycleTrack::from_controls(
            PlanarState::new(0.0, 0.0, 0.0),
            vec![0.0; 4],
            vec![0.0, 1.0, 2.0, 3.0],
            vec![Velocity::new(1.0, 0.0); 3],
        )
        .unwrap();
        assert!(loss_unicycle(&straight) < 1e-12);
        let mut bumped = gt.clone();
        let delta = 0.37;
        bumped.states[4].x += delta;
        // Interval 3 sees +delta in its target, interval 4 sees +delta in its start.
        assert_relative_eq!(loss_unicycle(&bumped) - loss_unicycle(&gt), 2.0 * delta, epsilon = 1e-9);
        let ru = unicycle_residuals(&bumped);
        let changed: Vec<usize> =
            (0..ru.len() / 3).filter(|k| (0..3).any(|c| ru[3 * k + c].value.abs() > 1e-9)).collect();
        assert_eq!(changed, vec![3, 4]);
    }

    #[test]
    fn smooth_loss_examples() {
        let mut t = UnicycleTrack::from_controls(
            PlanarState::new(0.0, 0.0, 0.0),
            vec![0.0; 4],
            vec![0.0, 1.0, 2.0, 3.0],
            vec![Velocity::new(1.0, 0.1); 3],
        )
        .unwrap();
        assert_eq!(loss_smooth(&t, SmoothTerm::Theta), 0.0);
        t.velocities[1].v = 2.0;
        t.velocities[2].v = 4.0;
        let theta_part: f64 = smooth_residuals(&t, SmoothTerm::Theta)[1..].iter().map(|r| r.value.abs()).sum();
        assert!(theta_part < 1e-12);
        assert_relative_eq!(loss_smooth(&t, SmoothTerm::Theta), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn motion_gradient_matches_finite_differences() {
        let gt = curved(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs = BoxNoise { level: 1.0 }.corrupt(&gt, &mut rng);
        let mut track = obs.to_track().unwrap();
        track.velocities[2].omega += 0.05;
        let cfg = FitConfig::default();
        let (_, g) = motion_loss(&track, &obs, &cfg).unwrap();
        let g = grad_to_flat(&g);
        let p = track_to_flat(&track);
        let h = 1e-7;
        for i in 0..p.len() {
            let eval = |d: f64| {
                let mut q = p.clone();
                q[i] += d;
                let mut t = track.clone();
                track_from_flat(&mut t, &q);
                motion_loss(&t, &obs, &cfg).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    fn circle(n: usize) -> UnicycleTrack {
        UnicycleTrack::from_controls(
            PlanarState::new(1.0, -2.0, 0.3),
            vec![0.5; n],
            (0..n).map(|i| i as f64).collect(),
            vec![Velocity::new(0.8, 0.05); n - 1],
        )
        .unwrap()
    }

    #[test]
    fn clean_observations_are_fixed_points() {
        let gt = circle(12);
        let obs = NoisyBoxTrack::from_track(&gt);
        let ts: Vec<f64> = gt.timestamps.clone();
        let gt_poses: Vec<Pose> = ts.iter().map(|&t| gt.pose_at(t).unwrap()).collect();
        for mode in FitMode::ALL {
            for solver in [Solver::GradientDescent, Solver::GaussNewton] {
                let cfg = FitConfig { mode, solver, iterations: 200, ..FitConfig::default() };
                let fitted = fit_track(&obs, &cfg).unwrap();
                let e = pose_errors(&track_poses(&fitted, mode, &ts).unwrap(), &gt_poses).unwrap();
                assert!(e.mean_translation < 1e-9 && e.mean_rotation < 1e-9, "{mode:?} {solver:?} {e:?}");
            }
        }
    }

    #[test]
    fn unicycle_fit_beats_raw_observations() {
        let gt = circle(30);
        let ts = gt.timestamps.clone();
        let gt_poses: Vec<Pose> = ts.iter().map(|&t| gt.pose_at(t).unwrap()).collect();
        let mut sums = [0.0; 4];
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let obs = BoxNoise { level: 2.0 }.corrupt(&gt, &mut rng);
            let err = |mode, solver| {
                let fitted = fit_track(&obs, &FitConfig { mode, solver, ..FitConfig::default() }).unwrap();
                pose_errors(&track_poses(&fitted, mode, &ts).unwrap(), &gt_poses).unwrap().mean_translation
            };
            sums[0] += err(FitMode::None, Solver::GradientDescent);
            sums[1] += err(FitMode::PerFrame, Solver::GradientDescent);
            sums[2] += err(FitMode::Unicycle, Solver::GradientDescent);
            sums[3] += err(FitMode::Unicycle, Solver::GaussNewton);
        }
        let [none, per_frame, uni, uni_gn] = sums;
        assert!(uni < none && uni < per_frame, "unicycle {uni} vs none {none}, per-frame {per_frame}");
        assert!(uni_gn < none, "gauss-newton {uni_gn} vs none {none}");
    }

    #[test]
    fn gauss_newton_never_increases_loss() {
        let gt = curved(15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs = BoxNoise { level: 2.0 }.corrupt(&gt, &mut rng);
        let mut cfg = FitConfig { solver: Solver::GaussNewton, ..FitConfig::default() };
        let mut last = huber_motion_loss(&obs.to_track().unwrap(), &obs, &cfg).unwrap();
        for iters in 1..8 {
            cfg.iterations = iters;
            let t = fit_track(&obs, &cfg).unwrap();
            let l = huber_motion_loss(&t, &obs, &cfg).unwrap();
            assert!(l <= last + 1e-12);
            last = l;
        }
    }

    #[test]
    fn pose_error_examples() {
        let a = Pose { x: 1.0, y: 2.0, z: 3.0, theta: 0.4 };
        assert_eq!(pose_error(&a, &a), (0.0, 0.0));
        let b = Pose { x: 1.0, y: 5.0, z: 7.0, theta: 0.4 + std::f64::consts::FRAC_PI_2 };
        let (er, et) = pose_error(&b, &a);
        assert_relative_eq!(er, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(et, 5.0, epsilon = 1e-12);
        let c = Pose { theta: 0.4 + std::f64::consts::PI, ..a };
        assert_relative_eq!(pose_error(&c, &a).0, std::f64::consts::PI, epsilon = 1e-7);
    }

    #[test]
    fn noise_calibration() {
        let gt = curved(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise = BoxNoise { level: 1.0 };
        let (mut dt, mut dth) = (0.0, 0.0);
        let trials = 20_000;
        for _ in 0..trials {
            let o = noise.corrupt(&gt, &mut rng);
            dt += ((o.boxes[0].x - gt.states[0].x).powi(2) + (o.boxes[0].y - gt.states[0].y).powi(2)).sqrt();
            dth += (o.boxes[0].theta - gt.states[0].theta).abs();
        }
        assert!((dt / trials as f64 - 0.5).abs() < 0.01);
        assert!((dth / trials as f64 - 5f64.to_radians()).abs() < 0.002);
    }
}
