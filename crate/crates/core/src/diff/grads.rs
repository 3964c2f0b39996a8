//! Gradient containers shaped like the trainable parameters, plus the
//! addressing scheme used to perturb and update individual parameters.

use nalgebra::{Matrix3, Vector3};

use crate::scene::gaussian::retract_rotation;
use crate::scene::track::TrackParam;
use crate::scene::{FrameCamera, Gaussian3D, SceneGraph, UnicycleTrack};

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrad {
    pub mu: Vector3<f64>,
    /// Right-perturbation tangent of the rotation.
    pub rotation: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: Vec<[f64; 3]>,
    pub logits: Vec<f64>,
}

impl GaussianGrad {
    pub fn zeros_like(g: &Gaussian3D) -> Self {
        Self {
            mu: Vector3::zeros(),
            rotation: Vector3::zeros(),
            log_scale: Vector3::zeros(),
            opacity_logit: 0.0,
            sh: vec![[0.0; 3]; g.sh.len()],
            logits: vec![0.0; g.logits.len()],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackGrad {
    pub states: Vec<[f64; 3]>,
    pub heights: Vec<f64>,
    pub velocities: Vec<[f64; 2]>,
}

impl TrackGrad {
    pub fn zeros_like(t: &UnicycleTrack) -> Self {
        Self {
            states: vec![[0.0; 3]; t.states.len()],
            heights: vec![0.0; t.heights.len()],
            velocities: vec![[0.0; 2]; t.velocities.len()],
        }
    }

    pub fn add(&mut self, p: TrackParam, value: f64) {
        match p {
            TrackParam::State(i, c) => self.states[i][c] += value,
            TrackParam::Height(i) => self.heights[i] += value,
            TrackParam::Velocity(i, c) => self.velocities[i][c] += value,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectGrad {
    pub canonical: Vec<GaussianGrad>,
    pub track: TrackGrad,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExposureGrad {
    pub a: Matrix3<f64>,
    pub b: Vector3<f64>,
}

impl Default for ExposureGrad {
    fn default() -> Self {
        Self { a: Matrix3::zeros(), b: Vector3::zeros() }
    }
}

/// Gradients for every trainable parameter of a scene and its cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub static_gaussians: Vec<GaussianGrad>,
    pub objects: Vec<ObjectGrad>,
    pub cameras: Vec<ExposureGrad>,
}

/// Which Gaussian a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GaussianRef {
    Static(usize),
    /// Object index, canonical Gaussian index.
    Object(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GaussianField {
    Mu(usize),
    Rotation(usize),
    LogScale(usize),
    Opacity,
    /// Coefficient index, color channel.
    Sh(usize, usize),
    Logit(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExposureField {
    A(usize, usize),
    B(usize),
}

/// Address of one scalar parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamId {
    Gaussian(GaussianRef, GaussianField),
    /// Object index and track parameter.
    Track(usize, TrackParamKey),
    /// Camera index and exposure entry.
    Exposure(usize, ExposureField),
}

/// Hashable mirror of [`TrackParam`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrackParamKey {
    State(usize, usize),
    Height(usize),
    Velocity(usize, usize),
}

impl From<TrackParamKey> for TrackParam {
    fn from(k: TrackParamKey) -> Self {
        match k {
            TrackParamKey::State(i, c) => TrackParam::State(i, c),
            TrackParamKey::Height(i) => TrackParam::Height(i),
            TrackParamKey::Velocity(i, c) => TrackParam::Velocity(i, c),
        }
    }
}

/// Parameter classes, each with its own learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    Mu,
    Rotation,
    LogScale,
    Opacity,
    Sh,
    Logits,
    ExposureA,
    ExposureB,
    TrackX,
    TrackY,
    TrackZ,
    TrackTheta,
    TrackV,
    TrackOmega,
}

impl ParamClass {
    pub const ALL: [ParamClass; 14] = [
        ParamClass::Mu,
        ParamClass::Rotation,
        ParamClass::LogScale,
        ParamClass::Opacity,
        ParamClass::Sh,
        ParamClass::Logits,
        ParamClass::ExposureA,
        ParamClass::ExposureB,
        ParamClass::TrackX,
        ParamClass::TrackY,
        ParamClass::TrackZ,
        ParamClass::TrackTheta,
        ParamClass::TrackV,
        ParamClass::TrackOmega,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamClass::Mu => "mu",
            ParamClass::Rotation => "rotation",
            ParamClass::LogScale => "log_scale",
            ParamClass::Opacity => "opacity_logit",
            ParamClass::Sh => "sh",
            ParamClass::Logits => "logits",
            ParamClass::ExposureA => "exposure_a",
            ParamClass::ExposureB => "exposure_b",
            ParamClass::TrackX => "track_x",
            ParamClass::TrackY => "track_y",
            ParamClass::TrackZ => "track_z",
            ParamClass::TrackTheta => "track_theta",
            ParamClass::TrackV => "track_v",
            ParamClass::TrackOmega => "track_omega",
        }
    }

    pub fn is_track(&self) -> bool {
        matches!(
            self,
            ParamClass::TrackX
                | ParamClass::TrackY
                | ParamClass::TrackZ
                | ParamClass::TrackTheta
                | ParamClass::TrackV
                | ParamClass::TrackOmega
        )
    }
}

impl ParamId {
    pub fn class(&self) -> ParamClass {
        match self {
            ParamId::Gaussian(_, f) => match f {
                GaussianField::Mu(_) => ParamClass::Mu,
                GaussianField::Rotation(_) => ParamClass::Rotation,
                GaussianField::LogScale(_) => ParamClass::LogScale,
                GaussianField::Opacity => ParamClass::Opacity,
                GaussianField::Sh(..) => ParamClass::Sh,
                GaussianField::Logit(_) => ParamClass::Logits,
            },
            ParamId::Track(_, k) => match k {
                TrackParamKey::State(_, 0) => ParamClass::TrackX,
                TrackParamKey::State(_, 1) => ParamClass::TrackY,
                TrackParamKey::State(..) => ParamClass::TrackTheta,
                TrackParamKey::Height(_) => ParamClass::TrackZ,
                TrackParamKey::Velocity(_, 0) => ParamClass::TrackV,
                TrackParamKey::Velocity(..) => ParamClass::TrackOmega,
            },
            ParamId::Exposure(_, ExposureField::A(..)) => ParamClass::ExposureA,
            ParamId::Exposure(_, ExposureField::B(_)) => ParamClass::ExposureB,
        }
    }
}

fn gaussian_entries(r: GaussianRef, g: &GaussianGrad, f: &mut impl FnMut(ParamId, f64)) {
    let mut emit = |field, v| f(ParamId::Gaussian(r, field), v);
    for c in 0..3 {
        emit(GaussianField::Mu(c), g.mu[c]);
    }
    for c in 0..3 {
        emit(GaussianField::Rotation(c), g.rotation[c]);
    }
    for c in 0..3 {
        emit(GaussianField::LogScale(c), g.log_scale[c]);
    }
    emit(GaussianField::Opacity, g.opacity_logit);
    for (k, coef) in g.sh.iter().enumerate() {
        for (c, v) in coef.iter().enumerate() {
            emit(GaussianField::Sh(k, c), *v);
        }
    }
    for (k, v) in g.logits.iter().enumerate() {
        emit(GaussianField::Logit(k), *v);
    }
}

fn gaussian_entries_mut(r: GaussianRef, g: &mut GaussianGrad, f: &mut impl FnMut(ParamId, &mut f64)) {
    let mut emit = |field, v: &mut f64| f(ParamId::Gaussian(r, field), v);
    for c in 0..3 {
        emit(GaussianField::Mu(c), &mut g.mu[c]);
    }
    for c in 0..3 {
        emit(GaussianField::Rotation(c), &mut g.rotation[c]);
    }
    for c in 0..3 {
        emit(GaussianField::LogScale(c), &mut g.log_scale[c]);
    }
    emit(GaussianField::Opacity, &mut g.opacity_logit);
    for (k, coef) in g.sh.iter_mut().enumerate() {
        for (c, v) in coef.iter_mut().enumerate() {
            emit(GaussianField::Sh(k, c), v);
        }
    }
    for (k, v) in g.logits.iter_mut().enumerate() {
        emit(GaussianField::Logit(k), v);
    }
}

impl ParamGrads {
    /// All-zero gradients shaped like `scene` with `cameras` exposure slots.
    pub fn zeros(scene: &SceneGraph, cameras: usize) -> Self {
        Self {
            static_gaussians: scene.static_gaussians.iter().map(GaussianGrad::zeros_like).collect(),
            objects: scene
                .objects
                .iter()
                .map(|o| ObjectGrad {
                    canonical: o.canonical.iter().map(GaussianGrad::zeros_like).collect(),
                    track: TrackGrad::zeros_like(&o.track),
                })
                .collect(),
            cameras: vec![ExposureGrad::default(); cameras],
        }
    }

    pub fn gaussian_mut(&mut self, r: GaussianRef) -> &mut GaussianGrad {
        match r {
            GaussianRef::Static(i) => &mut self.static_gaussians[i],
            GaussianRef::Object(o, i) => &mut self.objects[o].canonical[i],
        }
    }

    /// Visits every scalar in the canonical order: static Gaussians, then per
    /// object its canonical Gaussians and track (states, heights,
    /// velocities), then per camera `A` (row-major) and `b`.
    pub fn for_each(&self, mut f: impl FnMut(ParamId, f64)) {
        for (i, g) in self.static_gaussians.iter().enumerate() {
            gaussian_entries(GaussianRef::Static(i), g, &mut f);
        }
        for (o, obj) in self.objects.iter().enumerate() {
            for (i, g) in obj.canonical.iter().enumerate() {
                gaussian_entries(GaussianRef::Object(o, i), g, &mut f);
            }
            for (i, s) in obj.track.states.iter().enumerate() {
                for (c, v) in s.iter().enumerate() {
                    f(ParamId::Track(o, TrackParamKey::State(i, c)), *v);
                }
            }
            for (i, v) in obj.track.heights.iter().enumerate() {
                f(ParamId::Track(o, TrackParamKey::Height(i)), *v);
            }
            for (i, s) in obj.track.velocities.iter().enumerate() {
                for (c, v) in s.iter().enumerate() {
                    f(ParamId::Track(o, TrackParamKey::Velocity(i, c)), *v);
                }
            }
        }
        for (k, cam) in self.cameras.iter().enumerate() {
            for r in 0..3 {
                for c in 0..3 {
                    f(ParamId::Exposure(k, ExposureField::A(r, c)), cam.a[(r, c)]);
                }
            }
            for c in 0..3 {
                f(ParamId::Exposure(k, ExposureField::B(c)), cam.b[c]);
            }
        }
    }

    /// Mutable counterpart of [`Self::for_each`], same order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(ParamId, &mut f64)) {
        for (i, g) in self.static_gaussians.iter_mut().enumerate() {
            gaussian_entries_mut(GaussianRef::Static(i), g, &mut f);
        }
        for (o, obj) in self.objects.iter_mut().enumerate() {
            for (i, g) in obj.canonical.iter_mut().enumerate() {
                gaussian_entries_mut(GaussianRef::Object(o, i), g, &mut f);
            }
            for (i, s) in obj.track.states.iter_mut().enumerate() {
                for (c, v) in s.iter_mut().enumerate() {
                    f(ParamId::Track(o, TrackParamKey::State(i, c)), v);
                }
            }
            for (i, v) in obj.track.heights.iter_mut().enumerate() {
                f(ParamId::Track(o, TrackParamKey::Height(i)), v);
            }
            for (i, s) in obj.track.velocities.iter_mut().enumerate() {
                for (c, v) in s.iter_mut().enumerate() {
                    f(ParamId::Track(o, TrackParamKey::Velocity(i, c)), v);
                }
            }
        }
        for (k, cam) in self.cameras.iter_mut().enumerate() {
            for r in 0..3 {
                for c in 0..3 {
                    f(ParamId::Exposure(k, ExposureField::A(r, c)), &mut cam.a[(r, c)]);
                }
            }
            for c in 0..3 {
                f(ParamId::Exposure(k, ExposureField::B(c)), &mut cam.b[c]);
            }
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.for_each(|_, v| out.push(v));
        out
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        self.for_each(|id, _| out.push(id));
        out
    }

    /// Overwrites every entry from a flat vector in canonical order.
    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        self.for_each_mut(|_, v| *v = *it.next().expect("flat vector too short"));
        assert!(it.next().is_none(), "flat vector too long");
    }

    pub fn len(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, _| n += 1);
        n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: ParamId) -> f64 {
        match id {
            ParamId::Gaussian(r, field) => {
                let g = match r {
                    GaussianRef::Static(i) => &self.static_gaussians[i],
                    GaussianRef::Object(o, i) => &self.objects[o].canonical[i],
                };
                match field {
                    GaussianField::Mu(c) => g.mu[c],
                    GaussianField::Rotation(c) => g.rotation[c],
                    GaussianField::LogScale(c) => g.log_scale[c],
                    GaussianField::Opacity => g.opacity_logit,
                    GaussianField::Sh(k, c) => g.sh[k][c],
                    GaussianField::Logit(k) => g.logits[k],
                }
            }
            ParamId::Track(o, k) => {
                let t = &self.objects[o].track;
                match k {
                    TrackParamKey::State(i, c) => t.states[i][c],
                    TrackParamKey::Height(i) => t.heights[i],
                    TrackParamKey::Velocity(i, c) => t.velocities[i][c],
                }
            }
            ParamId::Exposure(k, ExposureField::A(r, c)) => self.cameras[k].a[(r, c)],
            ParamId::Exposure(k, ExposureField::B(c)) => self.cameras[k].b[c],
        }
    }

    /// `self += other * k`.
    pub fn add_scaled(&mut self, other: &ParamGrads, k: f64) {
        let flat = other.to_flat();
        let mut it = flat.iter();
        self.for_each_mut(|_, v| *v += k * it.next().expect("shape mismatch"));
    }

    pub fn scale(&mut self, k: f64) {
        self.for_each_mut(|_, v| *v *= k);
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        self.for_each(|_, v| m = m.max(v.abs()));
        m
    }

    /// First non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<ParamId> {
        let mut bad = None;
        self.for_each(|id, v| {
            if bad.is_none() && !v.is_finite() {
                bad = Some(id);
            }
        });
        bad
    }

    pub fn all_zero(&self) -> bool {
        let mut zero = true;
        self.for_each(|_, v| zero &= v == 0.0);
        zero
    }
}

fn gaussian_of(scene: &mut SceneGraph, r: GaussianRef) -> &mut Gaussian3D {
    match r {
        GaussianRef::Static(i) => &mut scene.static_gaussians[i],
        GaussianRef::Object(o, i) => &mut scene.objects[o].canonical[i],
    }
}

/// Current value of a parameter. Rotation entries have no scalar value and
/// report zero (they are tangent coordinates).
pub fn param_value(scene: &SceneGraph, cameras: &[FrameCamera], id: ParamId) -> f64 {
    match id {
        ParamId::Gaussian(r, field) => {
            let g = match r {
                GaussianRef::Static(i) => &scene.static_gaussians[i],
                GaussianRef::Object(o, i) => &scene.objects[o].canonical[i],
            };
            match field {
                GaussianField::Mu(c) => g.mu[c],
                GaussianField::Rotation(_) => 0.0,
                GaussianField::LogScale(c) => g.log_scale[c],
                GaussianField::Opacity => g.opacity_logit,
                GaussianField::Sh(k, c) => g.sh[k][c],
                GaussianField::Logit(k) => g.logits[k],
            }
        }
        ParamId::Track(o, k) => {
            let t = &scene.objects[o].track;
            match k {
                TrackParamKey::State(i, 0) => t.states[i].x,
                TrackParamKey::State(i, 1) => t.states[i].y,
                TrackParamKey::State(i, _) => t.states[i].theta,
                TrackParamKey::Height(i) => t.heights[i],
                TrackParamKey::Velocity(i, 0) => t.velocities[i].v,
                TrackParamKey::Velocity(i, _) => t.velocities[i].omega,
            }
        }
        ParamId::Exposure(k, ExposureField::A(r, c)) => cameras[k].exposure.a[(r, c)],
        ParamId::Exposure(k, ExposureField::B(c)) => cameras[k].exposure.b[c],
    }
}

/// Moves one parameter by `delta`; rotation entries move along their tangent axis.
pub fn perturb(scene: &mut SceneGraph, cameras: &mut [FrameCamera], id: ParamId, delta: f64) {
    match id {
        ParamId::Gaussian(r, field) => {
            let g = gaussian_of(scene, r);
            match field {
                GaussianField::Mu(c) => g.mu[c] += delta,
                GaussianField::Rotation(c) => {
                    let mut axis = Vector3::zeros();
                    axis[c] = delta;
                    g.rotation = retract_rotation(&g.rotation, &axis);
                }
                GaussianField::LogScale(c) => g.log_scale[c] += delta,
                GaussianField::Opacity => g.opacity_logit += delta,
                GaussianField::Sh(k, c) => g.sh[k][c] += delta,
                GaussianField::Logit(k) => g.logits[k] += delta,
            }
        }
        ParamId::Track(o, k) => {
            let t = &mut scene.objects[o].track;
            match k {
                TrackParamKey::State(i, 0) => t.states[i].x += delta,
                TrackParamKey::State(i, 1) => t.states[i].y += delta,
                TrackParamKey::State(i, _) => t.states[i].theta += delta,
                TrackParamKey::Height(i) => t.heights[i] += delta,
                TrackParamKey::Velocity(i, 0) => t.velocities[i].v += delta,
                TrackParamKey::Velocity(i, _) => t.velocities[i].omega += delta,
            }
        }
        ParamId::Exposure(k, ExposureField::A(r, c)) => cameras[k].exposure.a[(r, c)] += delta,
        ParamId::Exposure(k, ExposureField::B(c)) => cameras[k].exposure.b[c] += delta,
    }
}

/// Adds a full step (shaped like the gradients) to the parameters.
/// Rotations are updated by retraction, which keeps quaternions unit-norm.
pub fn apply_step(scene: &mut SceneGraph, cameras: &mut [FrameCamera], step: &ParamGrads) {
    fn apply_gaussian(g: &mut Gaussian3D, s: &GaussianGrad) {
        g.mu += s.mu;
        if s.rotation != Vector3::zeros() {
            g.rotation = retract_rotation(&g.rotation, &s.rotation);
        }
        g.log_scale += s.log_scale;
        g.opacity_logit += s.opacity_logit;
        for (c, d) in g.sh.iter_mut().zip(&s.sh) {
            for k in 0..3 {
                c[k] += d[k];
            }
        }
        for (l, d) in g.logits.iter_mut().zip(&s.logits) {
            *l += d;
        }
    }
    for (g, s) in scene.static_gaussians.iter_mut().zip(&step.static_gaussians) {
        apply_gaussian(g, s);
    }
    for (obj, s) in scene.objects.iter_mut().zip(&step.objects) {
        for (g, d) in obj.canonical.iter_mut().zip(&s.canonical) {
            apply_gaussian(g, d);
        }
        for (st, d) in obj.track.states.iter_mut().zip(&s.track.states) {
            st.x += d[0];
            st.y += d[1];
            st.theta += d[2];
        }
        for (h, d) in obj.track.heights.iter_mut().zip(&s.track.heights) {
            *h += d;
        }
        for (v, d) in obj.track.velocities.iter_mut().zip(&s.track.velocities) {
            v.v += d[0];
            v.omega += d[1];
        }
    }
    for (cam, s) in cameras.iter_mut().zip(&step.cameras) {
        cam.exposure.a += s.a;
        cam.exposure.b += s.b;
    }
}
