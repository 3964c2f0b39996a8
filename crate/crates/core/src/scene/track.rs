//! Unicycle-model object tracks.
//!
//! A track stores one planar state `(x, y, theta)` and one height `z` per
//! observed timestamp, plus a forward/angular velocity pair per interval.
//! Velocities are rates per frame; an interval spanning `tau` frames advances
//! the heading by `omega * tau`.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Maximum extrapolation (in frames) allowed past either end of a track.
pub const DEFAULT_HORIZON: f64 = 2.0;

/// Below this turn angle the closed-form arc terms are replaced by series.
pub const SMALL_ANGLE: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl PlanarState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Velocity {
    pub v: f64,
    pub omega: f64,
}

impl Velocity {
    pub fn new(v: f64, omega: f64) -> Self {
        Self { v, omega }
    }
}

/// `sin(a)/a`, `(1 - cos a)/a` and their derivatives in `a`.
#[derive(Clone, Copy, Debug)]
struct ArcTerms {
    s: f64,
    c: f64,
    ds: f64,
    dc: f64,
}

fn arc_terms_series(a: f64) -> ArcTerms {
    let a2 = a * a;
    let a4 = a2 * a2;
    let a6 = a4 * a2;
    let a8 = a4 * a4;
    ArcTerms {
        s: 1.0 - a2 / 6.0 + a4 / 120.0 - a6 / 5040.0 + a8 / 362_880.0,
        c: a * (0.5 - a2 / 24.0 + a4 / 720.0 - a6 / 40_320.0 + a8 / 3_628_800.0),
        ds: a * (-1.0 / 3.0 + a2 / 30.0 - a4 / 840.0 + a6 / 45_360.0),
        dc: 0.5 - a2 / 8.0 + a4 / 144.0 - a6 / 5760.0 + a8 / 403_200.0,
    }
}

fn arc_terms_closed(a: f64) -> ArcTerms {
    let (sin, cos) = a.sin_cos();
    let half = (0.5 * a).sin();
    let s = sin / a;
    let c = 2.0 * half * half / a;
    ArcTerms { s, c, ds: (cos - s) / a, dc: (sin - c) / a }
}

fn arc_terms(a: f64) -> ArcTerms {
    if a.abs() < SMALL_ANGLE {
        arc_terms_series(a)
    } else {
        arc_terms_closed(a)
    }
}

/// Jacobian of one propagation step: rows `(x', y', theta')`.
#[derive(Clone, Copy, Debug)]
pub struct StepJacobian {
    /// Columns `(x, y, theta)`.
    pub wrt_state: Matrix3<f64>,
    /// Columns `(v, omega)`.
    pub wrt_velocity: nalgebra::Matrix3x2<f64>,
}

fn step_from_terms(s: &PlanarState, vel: &Velocity, tau: f64, t: &ArcTerms) -> (PlanarState, StepJacobian) {
    let (sin, cos) = s.theta.sin_cos();
    let fx = cos * t.s - sin * t.c;
    let fy = sin * t.s + cos * t.c;
    let dx = vel.v * tau * fx;
    let dy = vel.v * tau * fy;
    let next = PlanarState { x: s.x + dx, y: s.y + dy, theta: s.theta + vel.omega * tau };
    let wrt_state = Matrix3::new(1.0, 0.0, -dy, 0.0, 1.0, dx, 0.0, 0.0, 1.0);
    let tau2v = vel.v * tau * tau;
    let wrt_velocity = nalgebra::Matrix3x2::new(
        tau * fx,
        tau2v * (cos * t.ds - sin * t.dc),
        tau * fy,
        tau2v * (sin * t.ds + cos * t.dc),
        0.0,
        tau,
    );
    (next, StepJacobian { wrt_state, wrt_velocity })
}

/// Advances a planar state by `tau` frames at constant `(v, omega)`.
pub fn propagate(s: &PlanarState, vel: &Velocity, tau: f64) -> PlanarState {
    step_from_terms(s, vel, tau, &arc_terms(vel.omega * tau)).0
}

/// [`propagate`] together with its Jacobian.
pub fn propagate_with_jacobian(s: &PlanarState, vel: &Velocity, tau: f64) -> (PlanarState, StepJacobian) {
    step_from_terms(s, vel, tau, &arc_terms(vel.omega * tau))
}

/// The discrete unicycle update evaluated literally as
/// `x + v/w (sin th' - sin th)`, `y - v/w (cos th' - cos th)`.
/// Singular at `omega = 0`; reference use only.
pub fn propagate_closed_form(s: &PlanarState, vel: &Velocity, tau: f64) -> PlanarState {
    let theta = s.theta + vel.omega * tau;
    let r = vel.v / vel.omega;
    PlanarState { x: s.x + r * (theta.sin() - s.theta.sin()), y: s.y - r * (theta.cos() - s.theta.cos()), theta }
}

/// The small-turn series branch of [`propagate`], forced regardless of angle.
pub fn propagate_series(s: &PlanarState, vel: &Velocity, tau: f64) -> PlanarState {
    step_from_terms(s, vel, tau, &arc_terms_series(vel.omega * tau)).0
}

/// A rigid object pose with yaw-only rotation.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
}

impl Pose {
    pub fn identity() -> Self {
        Self { x: 0.0, y: 0.0, z: 0.0, theta: 0.0 }
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        yaw_matrix(self.theta)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        let (s, c) = (0.5 * self.theta).sin_cos();
        UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(c, 0.0, 0.0, s))
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation()
    }

    pub fn inverse_apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().transpose() * (p - self.translation())
    }
}

pub fn yaw_matrix(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Derivative of [`yaw_matrix`] with respect to the angle.
pub fn yaw_matrix_derivative(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// A track parameter that a pose depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackParam {
    /// State `i`, component 0 = x, 1 = y, 2 = theta.
    State(usize, usize),
    Height(usize),
    /// Velocity `i`, component 0 = v, 1 = omega.
    Velocity(usize, usize),
}

/// Sparse Jacobian of a pose `(x, y, z, theta)` with respect to track parameters.
#[derive(Clone, Debug, Default)]
pub struct PoseJacobian {
    pub entries: Vec<(TrackParam, [f64; 4])>,
}

impl PoseJacobian {
    /// Contracts an upstream pose gradient into per-parameter gradients.
    pub fn contract(&self, d_pose: &[f64; 4]) -> impl Iterator<Item = (TrackParam, f64)> + '_ {
        let d = *d_pose;
        self.entries.iter().map(move |(p, j)| (*p, j[0] * d[0] + j[1] * d[1] + j[2] * d[2] + j[3] * d[3]))
    }
}

/// Per-object trainable unicycle states and velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct UnicycleTrack {
    pub timestamps: Vec<f64>,
    pub states: Vec<PlanarState>,
    pub heights: Vec<f64>,
    pub velocities: Vec<Velocity>,
}

impl UnicycleTrack {
    /// Builds a track whose states follow the unicycle update exactly.
    pub fn from_controls(
        initial: PlanarState,
        heights: Vec<f64>,
        timestamps: Vec<f64>,
        velocities: Vec<Velocity>,
    ) -> Result<Self> {
        if timestamps.is_empty() || velocities.len() + 1 != timestamps.len() {
            return Err(Error::Invalid("need one velocity per interval".into()));
        }
        let mut states = Vec::with_capacity(timestamps.len());
        states.push(initial);
        for (i, vel) in velocities.iter().enumerate() {
            let tau = timestamps[i + 1] - timestamps[i];
            let next = propagate(&states[i], vel, tau);
            states.push(next);
        }
        let track = Self { timestamps, states, heights, velocities };
        track.validate()?;
        Ok(track)
    }

    /// Track whose velocities are initialized from finite differences of the
    /// given states: `omega` from the heading change, `v` from the chord length
    /// corrected for the arc.
    pub fn from_states(timestamps: Vec<f64>, states: Vec<PlanarState>, heights: Vec<f64>) -> Result<Self> {
        let mut velocities = Vec::with_capacity(states.len().saturating_sub(1));
        for i in 0..states.len().saturating_sub(1) {
            let tau = timestamps[i + 1] - timestamps[i];
            let omega = (states[i + 1].theta - states[i].theta) / tau;
            let t = arc_terms(omega * tau);
            let chord = ((states[i + 1].x - states[i].x).powi(2) + (states[i + 1].y - states[i].y).powi(2)).sqrt();
            let len = (t.s * t.s + t.c * t.c).sqrt();
            // Sign from the projection of the displacement onto the mid heading.
            let mid = states[i].theta + 0.5 * omega * tau;
            let along = (states[i + 1].x - states[i].x) * mid.cos() + (states[i + 1].y - states[i].y) * mid.sin();
            let v = chord / (tau * len) * along.signum();
            velocities.push(Velocity { v, omega });
        }
        let track = Self { timestamps, states, heights, velocities };
        track.validate()?;
        Ok(track)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.timestamps[0]
    }

    pub fn last(&self) -> f64 {
        *self.timestamps.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if n == 0 {
            return Err(Error::Invalid("track has no states".into()));
        }
        if self.states.len() != n || self.heights.len() != n {
            return Err(Error::Invalid("states/heights must match timestamps".into()));
        }
        if self.velocities.len() + 1 != n {
            return Err(Error::Invalid("len(velocities) must equal len(states) - 1".into()));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("timestamps must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Index of the stored state matching `t` exactly, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.timestamps.partition_point(|&s| s < t);
        (i < self.timestamps.len() && self.timestamps[i] == t).then_some(i)
    }

    fn check_range(&self, t: f64, horizon: f64) -> Result<()> {
        if t < self.first() - horizon || t > self.last() + horizon || !t.is_finite() {
            return Err(Error::OutOfRange { t, first: self.first(), last: self.last(), horizon });
        }
        Ok(())
    }

    /// Pose at a (possibly fractional) timestamp using the default horizon.
    pub fn pose_at(&self, t: f64) -> Result<Pose> {
        self.pose_at_within(t, DEFAULT_HORIZON).map(|(p, _)| p)
    }

    /// Pose and its Jacobian with respect to the track parameters.
    ///
    /// Stored timestamps return the stored state verbatim. Other timestamps
    /// propagate the nearest earlier state with that interval's velocity
    /// (or the first interval's, backwards, before the first timestamp);
    /// heights are interpolated linearly and held constant outside the range.
    pub fn pose_at_within(&self, t: f64, horizon: f64) -> Result<(Pose, PoseJacobian)> {
        self.check_range(t, horizon)?;
        let n = self.len();
        if let Some(i) = self.index_of(t) {
            let s = self.states[i];
            let jac = PoseJacobian {
                entries: vec![
                    (TrackParam::State(i, 0), [1.0, 0.0, 0.0, 0.0]),
                    (TrackParam::State(i, 1), [0.0, 1.0, 0.0, 0.0]),
                    (TrackParam::State(i, 2), [0.0, 0.0, 0.0, 1.0]),
                    (TrackParam::Height(i), [0.0, 0.0, 1.0, 0.0]),
                ],
            };
            return Ok((Pose { x: s.x, y: s.y, z: self.heights[i], theta: s.theta }, jac));
        }
        // Base state index and interval used for propagation.
        let (base, interval) = if t < self.first() {
            (0, if n > 1 { Some(0) } else { None })
        } else {
            let i = self.timestamps.partition_point(|&s| s <= t) - 1;
            (
                i,
                if i + 1 < n {
                    Some(i)
                } else if n > 1 {
                    Some(n - 2)
                } else {
                    None
                },
            )
        };
        let tau = t - self.timestamps[base];
        let vel = interval.map(|k| self.velocities[k]).unwrap_or(Velocity { v: 0.0, omega: 0.0 });
        let (next, j) = propagate_with_jacobian(&self.states[base], &vel, tau);

        let mut entries = Vec::with_capacity(7);
        for c in 0..3 {
            let col = j.wrt_state.column(c);
            entries.push((TrackParam::State(base, c), [col[0], col[1], 0.0, col[2]]));
        }
        if let Some(k) = interval {
            for c in 0..2 {
                let col = j.wrt_velocity.column(c);
                entries.push((TrackParam::Velocity(k, c), [col[0], col[1], 0.0, col[2]]));
            }
        }
        let z = if t > self.first() && t < self.last() {
            let (t0, t1) = (self.timestamps[base], self.timestamps[base + 1]);
            let w = (t - t0) / (t1 - t0);
            entries.push((TrackParam::Height(base), [0.0, 0.0, 1.0 - w, 0.0]));
            entries.push((TrackParam::Height(base + 1), [0.0, 0.0, w, 0.0]));
            self.heights[base] * (1.0 - w) + self.heights[base + 1] * w
        } else {
            entries.push((TrackParam::Height(base), [0.0, 0.0, 1.0, 0.0]));
            self.heights[base]
        };
        Ok((Pose { x: next.x, y: next.y, z, theta: next.theta }, PoseJacobian { entries }))
    }

    /// Pose by linear interpolation of the stored states (linear
    /// extrapolation from the end intervals outside the range).
    pub fn pose_at_linear(&self, t: f64) -> Result<Pose> {
        self.check_range(t, DEFAULT_HORIZON)?;
        let n = self.len();
        if let Some(i) = self.index_of(t) {
            let s = self.states[i];
            return Ok(Pose { x: s.x, y: s.y, z: self.heights[i], theta: s.theta });
        }
        if n == 1 {
            let s = self.states[0];
            return Ok(Pose { x: s.x, y: s.y, z: self.heights[0], theta: s.theta });
        }
        let i = self.timestamps.partition_point(|&s| s <= t).clamp(1, n - 1) - 1;
        let (t0, t1) = (self.timestamps[i], self.timestamps[i + 1]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.states[i], self.states[i + 1]);
        let lerp = |p: f64, q: f64| p + (q - p) * w;
        Ok(Pose {
            x: lerp(a.x, b.x),
            y: lerp(a.y, b.y),
            z: lerp(self.heights[i], self.heights[i + 1]),
            theta: lerp(a.theta, b.theta),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn track_with(states: Vec<PlanarState>, heights: Vec<f64>, vels: Vec<Velocity>) -> UnicycleTrack {
        let timestamps = (0..states.len()).map(|i| i as f64).collect();
        UnicycleTrack { timestamps, states, heights, velocities: vels }
    }

    #[test]
    fn observed_timestamp_returns_stored_state() {
        let tr = track_with(
            vec![PlanarState::new(1.0, 2.0, 0.0), PlanarState::new(2.0, 2.0, 0.0)],
            vec![0.5, 0.5],
            vec![Velocity::new(1.0, 0.0)],
        );
        let p = tr.pose_at(0.0).unwrap();
        assert_eq!(p.translation(), Vector3::new(1.0, 2.0, 0.5));
        assert_eq!(p.theta, 0.0);
        assert_eq!(p.rotation_matrix(), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_step() {
        let s = propagate(&PlanarState::new(0.0, 0.0, 0.0), &Velocity::new(1.0, FRAC_PI_2), 1.0);
        let r = 2.0 / std::f64::consts::PI;
        assert_relative_eq!(s.x, r, epsilon = 1e-14);
        assert_relative_eq!(s.y, r, epsilon = 1e-14);
        assert_relative_eq!(s.theta, FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn straight_line_limit() {
        let s = propagate(&PlanarState::new(0.0, 0.0, 0.0), &Velocity::new(1.0, 0.0), 1.0);
        assert_eq!((s.x, s.y, s.theta), (1.0, 0.0, 0.0));
    }

    #[test]
    fn series_agrees_with_closed_form_near_zero_turn() {
        for &omega in &[1e-5, -1e-5, 3e-4, 5e-3, -9e-3] {
            for &theta in &[0.0, 0.7, -2.1, 3.0] {
                let s = PlanarState::new(0.3, -0.2, theta);
                let vel = Velocity::new(1.7, omega);
                let a = propagate_series(&s, &vel, 1.0);
                let b = propagate_closed_form(&s, &vel, 1.0);
                assert!((a.x - b.x).abs() < 1e-8 && (a.y - b.y).abs() < 1e-8, "omega={omega} theta={theta}");
                assert_eq!(a.theta, b.theta);
            }
        }
    }

    #[test]
    fn branch_switch_is_continuous() {
        let s = PlanarState::new(0.0, 0.0, 0.4);
        let lo = propagate(&s, &Velocity::new(2.0, SMALL_ANGLE * (1.0 - 1e-12)), 1.0);
        let hi = propagate(&s, &Velocity::new(2.0, SMALL_ANGLE * (1.0 + 1e-12)), 1.0);
        assert!((lo.x - hi.x).abs() < 1e-13 && (lo.y - hi.y).abs() < 1e-13);
    }

    #[test]
    fn step_jacobian_matches_finite_differences() {
        let h = 1e-6;
        for &omega in &[0.0, 1e-3, 0.3, -1.2] {
            let s = PlanarState::new(0.5, -1.0, 0.8);
            let vel = Velocity::new(1.3, omega);
            let tau = 1.7;
            let (_, j) = propagate_with_jacobian(&s, &vel, tau);
            let f = |s: PlanarState, v: Velocity| {
                let n = propagate(&s, &v, tau);
                Vector3::new(n.x, n.y, n.theta)
            };
            for c in 0..3 {
                let mut sp = s;
                let mut sm = s;
                match c {
                    0 => {
                        sp.x += h;
                        sm.x -= h
                    }
                    1 => {
                        sp.y += h;
                        sm.y -= h
                    }
                    _ => {
                        sp.theta += h;
                        sm.theta -= h
                    }
                }
                let fd = (f(sp, vel) - f(sm, vel)) / (2.0 * h);
                assert_relative_eq!(fd, j.wrt_state.column(c).into_owned(), epsilon = 1e-7);
            }
            for c in 0..2 {
                let mut vp = vel;
                let mut vm = vel;
                if c == 0 {
                    vp.v += h;
                    vm.v -= h;
                } else {
                    vp.omega += h;
                    vm.omega -= h;
                }
                let fd = (f(s, vp) - f(s, vm)) / (2.0 * h);
                assert_relative_eq!(fd, j.wrt_velocity.column(c).into_owned(), epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn k_unit_steps_equal_repeated_single_steps() {
        let vel = Velocity::new(0.9, 0.23);
        let start = PlanarState::new(1.0, 2.0, -0.3);
        let mut s = start;
        for k in 1..=10 {
            s = propagate(&s, &vel, 1.0);
            let direct = propagate(&start, &vel, k as f64);
            assert!((s.x - direct.x).abs() < 1e-12, "k={k}");
            assert!((s.y - direct.y).abs() < 1e-12, "k={k}");
            assert!((s.theta - direct.theta).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn fractional_pose_uses_interval_velocity_and_linear_height() {
        let tr = UnicycleTrack::from_controls(
            PlanarState::new(0.0, 0.0, 0.0),
            vec![0.0, 1.0, 2.0],
            vec![0.0, 2.0, 4.0],
            vec![Velocity::new(1.0, 0.1), Velocity::new(1.0, -0.2)],
        )
        .unwrap();
        let p = tr.pose_at(1.0).unwrap();
        let expect = propagate(&tr.states[0], &tr.velocities[0], 1.0);
        assert_relative_eq!(p.x, expect.x, epsilon = 1e-15);
        assert_relative_eq!(p.z, 0.5, epsilon = 1e-15);
        // Propagating to the next stored timestamp reproduces the stored state.
        let q = propagate(&tr.states[0], &tr.velocities[0], 2.0);
        assert_relative_eq!(q.x, tr.states[1].x, epsilon = 1e-14);
        assert_relative_eq!(q.y, tr.states[1].y, epsilon = 1e-14);
    }

    #[test]
    fn out_of_horizon_is_an_error() {
        let tr = UnicycleTrack::from_controls(
            PlanarState::new(0.0, 0.0, 0.0),
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![Velocity::new(1.0, 0.0)],
        )
        .unwrap();
        assert!(tr.pose_at(1.0 + DEFAULT_HORIZON + 0.1).is_err());
        assert!(tr.pose_at(-DEFAULT_HORIZON - 0.1).is_err());
        let p = tr.pose_at(2.0).unwrap();
        assert_relative_eq!(p.x, 2.0, epsilon = 1e-15);
        let p = tr.pose_at(-1.0).unwrap();
        assert_relative_eq!(p.x, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn pose_jacobian_matches_finite_differences() {
        let tr = UnicycleTrack::from_controls(
            PlanarState::new(0.2, 0.1, 0.3),
            vec![0.4, 0.9, 0.6],
            vec![0.0, 2.0, 4.0],
            vec![Velocity::new(0.8, 0.15), Velocity::new(1.1, -0.25)],
        )
        .unwrap();
        let h = 1e-6;
        for &t in &[0.0, 0.5, 2.0, 3.3, 5.0, -0.7] {
            let (_, jac) = tr.pose_at_within(t, DEFAULT_HORIZON).unwrap();
            for (param, col) in &jac.entries {
                let bump = |d: f64| {
                    let mut tr2 = tr.clone();
                    match *param {
                        TrackParam::State(i, 0) => tr2.states[i].x += d,
                        TrackParam::State(i, 1) => tr2.states[i].y += d,
                        TrackParam::State(i, _) => tr2.states[i].theta += d,
                        TrackParam::Height(i) => tr2.heights[i] += d,
                        TrackParam::Velocity(i, 0) => tr2.velocities[i].v += d,
                        TrackParam::Velocity(i, _) => tr2.velocities[i].omega += d,
                    }
                    let p = tr2.pose_at(t).unwrap();
                    [p.x, p.y, p.z, p.theta]
                };
                let (a, b) = (bump(h), bump(-h));
                for k in 0..4 {
                    let fd = (a[k] - b[k]) / (2.0 * h);
                    assert!((fd - col[k]).abs() < 1e-7, "t={t} {param:?} k={k}: {fd} vs {}", col[k]);
                }
            }
        }
    }

    #[test]
    fn finite_difference_velocities_reproduce_states() {
        let truth = UnicycleTrack::from_controls(
            PlanarState::new(0.0, 0.0, 0.2),
            vec![0.0; 4],
            vec![0.0, 1.0, 2.0, 3.0],
            vec![Velocity::new(1.0, 0.3), Velocity::new(1.2, -0.1), Velocity::new(0.9, 0.0)],
        )
        .unwrap();
        let tr =
            UnicycleTrack::from_states(truth.timestamps.clone(), truth.states.clone(), truth.heights.clone()).unwrap();
        for (a, b) in tr.velocities.iter().zip(&truth.velocities) {
            assert_relative_eq!(a.v, b.v, epsilon = 1e-12);
            assert_relative_eq!(a.omega, b.omega, epsilon = 1e-12);
        }
    }
}
