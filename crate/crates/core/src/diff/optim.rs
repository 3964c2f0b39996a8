//! First-order updates with per-class learning rates.

use serde::{Deserialize, Serialize};

use super::grads::{apply_step, ParamClass, ParamGrads};
use crate::error::{Error, Result};
use crate::scene::{FrameCamera, SceneGraph};

/// Learning rate per parameter class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub mu: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh: f64,
    pub logits: f64,
    pub exposure: f64,
    pub track_xy: f64,
    pub track_z: f64,
    pub track_theta: f64,
    pub track_velocity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mu: 2e-3,
            rotation: 5e-3,
            log_scale: 5e-3,
            opacity: 2e-2,
            sh: 1e-2,
            logits: 5e-2,
            exposure: 5e-3,
            track_xy: 1e-2,
            track_z: 5e-3,
            track_theta: 5e-3,
            track_velocity: 5e-3,
        }
    }
}

impl LearningRates {
    pub fn for_class(&self, c: ParamClass) -> f64 {
        match c {
            ParamClass::Mu => self.mu,
            ParamClass::Rotation => self.rotation,
            ParamClass::LogScale => self.log_scale,
            ParamClass::Opacity => self.opacity,
            ParamClass::Sh => self.sh,
            ParamClass::Logits => self.logits,
            ParamClass::ExposureA | ParamClass::ExposureB => self.exposure,
            ParamClass::TrackX | ParamClass::TrackY => self.track_xy,
            ParamClass::TrackZ => self.track_z,
            ParamClass::TrackTheta => self.track_theta,
            ParamClass::TrackV | ParamClass::TrackOmega => self.track_velocity,
        }
    }

    /// Same rates with every class outside `keep` set to zero.
    pub fn only(&self, keep: impl Fn(ParamClass) -> bool) -> Self {
        let z = |c: ParamClass, v: f64| if keep(c) { v } else { 0.0 };
        Self {
            mu: z(ParamClass::Mu, self.mu),
            rotation: z(ParamClass::Rotation, self.rotation),
            log_scale: z(ParamClass::LogScale, self.log_scale),
            opacity: z(ParamClass::Opacity, self.opacity),
            sh: z(ParamClass::Sh, self.sh),
            logits: z(ParamClass::Logits, self.logits),
            exposure: z(ParamClass::ExposureA, self.exposure),
            track_xy: z(ParamClass::TrackX, self.track_xy),
            track_z: z(ParamClass::TrackZ, self.track_z),
            track_theta: z(ParamClass::TrackTheta, self.track_theta),
            track_velocity: z(ParamClass::TrackV, self.track_velocity),
        }
    }
}

/// Learning rates plus the exponential decay of the track classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub rates: LearningRates,
    /// Track learning rates are multiplied by `track_decay^iteration`.
    pub track_decay: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { rates: LearningRates::default(), track_decay: 0.995 }
    }
}

impl Schedule {
    pub fn rate(&self, c: ParamClass, iteration: usize) -> f64 {
        let base = self.rates.for_class(c);
        if c.is_track() {
            base * self.track_decay.powi(iteration as i32)
        } else {
            base
        }
    }
}

fn check_finite(grads: &ParamGrads) -> Result<()> {
    match grads.first_non_finite() {
        Some(id) => Err(Error::NonFiniteGradient { param: format!("{id:?}") }),
        None => Ok(()),
    }
}

/// Plain gradient descent. A non-finite gradient aborts before any update.
pub fn sgd_step(
    scene: &mut SceneGraph,
    cameras: &mut [FrameCamera],
    grads: &ParamGrads,
    schedule: &Schedule,
    iteration: usize,
) -> Result<()> {
    check_finite(grads)?;
    let mut step = grads.clone();
    step.for_each_mut(|id, v| *v *= -schedule.rate(id.class(), iteration));
    apply_step(scene, cameras, &step);
    Ok(())
}

/// Adam with bias correction, state kept as flat vectors in canonical order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-15, m: Vec::new(), v: Vec::new(), t: 0 }
    }
}

impl Adam {
    pub fn step(
        &mut self,
        scene: &mut SceneGraph,
        cameras: &mut [FrameCamera],
        grads: &ParamGrads,
        schedule: &Schedule,
        iteration: usize,
    ) -> Result<()> {
        check_finite(grads)?;
        let g = grads.to_flat();
        if self.m.len() != g.len() {
            self.m = vec![0.0; g.len()];
            self.v = vec![0.0; g.len()];
            self.t = 0;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut step = grads.clone();
        let mut i = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        step.for_each_mut(|id, s| {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            *s = -schedule.rate(id.class(), iteration) * mh / (vh.sqrt() + eps);
            i += 1;
        });
        apply_step(scene, cameras, &step);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian3D;
    use nalgebra::Vector3;

    fn one() -> SceneGraph {
        let mut s = SceneGraph::new(1, Vector3::zeros());
        s.static_gaussians.push(Gaussian3D::isotropic(Vector3::new(1.0, 2.0, 3.0), 0.1, 0.5, [0.5; 3], vec![0.0]));
        s
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut s = one();
        let before = s.clone();
        sgd_step(&mut s, &mut [], &ParamGrads::zeros(&before, 0), &Schedule::default(), 0).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn quadratic_descent_is_monotone() {
        // L = 0.5 (mu_x - 3)^2, lr 0.1 < 2.
        let mut s = one();
        let schedule = Schedule { rates: LearningRates { mu: 0.1, ..LearningRates::default() }, track_decay: 1.0 };
        let mut last = f64::INFINITY;
        for it in 0..50 {
            let x = s.static_gaussians[0].mu.x;
            let loss = 0.5 * (x - 3.0) * (x - 3.0);
            assert!(loss <= last);
            last = loss;
            let mut g = ParamGrads::zeros(&s, 0);
            g.static_gaussians[0].mu.x = x - 3.0;
            sgd_step(&mut s, &mut [], &g, &schedule, it).unwrap();
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut s = one();
        let before = s.clone();
        let mut g = ParamGrads::zeros(&s, 0);
        g.static_gaussians[0].log_scale.y = f64::NAN;
        g.static_gaussians[0].mu.x = 1.0;
        let err = sgd_step(&mut s, &mut [], &g, &Schedule::default(), 0).unwrap_err();
        assert_eq!(err.kind(), "non_finite_gradient");
        assert!(err.to_string().contains("LogScale(1)"));
        assert_eq!(s, before);
    }

    #[test]
    fn rotation_steps_keep_unit_norm() {
        let mut s = one();
        let mut adam = Adam::default();
        for it in 0..20 {
            let mut g = ParamGrads::zeros(&s, 0);
            g.static_gaussians[0].rotation = Vector3::new(0.3, -1.0, 2.0);
            adam.step(&mut s, &mut [], &g, &Schedule::default(), it).unwrap();
            assert!((s.static_gaussians[0].rotation.quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn track_rate_decays() {
        let s = Schedule::default();
        assert!(s.rate(ParamClass::TrackX, 100) < s.rate(ParamClass::TrackX, 0));
        assert_eq!(s.rate(ParamClass::Mu, 100), s.rate(ParamClass::Mu, 0));
    }
}
