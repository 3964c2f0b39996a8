//! Analytic backward pass through exposure, compositing, projection,
//! the covariance factorization, SH evaluation, and rigid object motion.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::grads::{GaussianGrad, GaussianRef, ParamGrads};
use crate::compositor::{pixel_center, TileTape};
use crate::error::{Error, Result};
use crate::projection::Splat2D;
use crate::render::{position_at, RenderOutput};
use crate::scene::track::yaw_matrix_derivative;
use crate::scene::{Provenance, SceneGraph};
use crate::sh;

/// Per-pixel loss gradients with respect to each rendered buffer.
///
/// `color` is taken with respect to `color_exposed` when the render applied
/// exposure and with respect to `color` otherwise. An empty buffer means a
/// zero gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Upstream {
    pub color: Vec<f64>,
    pub semantic: Vec<f64>,
    pub semantic_2d: Vec<f64>,
    pub depth: Vec<f64>,
    pub flow: Vec<f64>,
}

impl Upstream {
    pub fn is_zero(&self) -> bool {
        [&self.color, &self.semantic, &self.semantic_2d, &self.depth, &self.flow]
            .iter()
            .all(|b| b.iter().all(|v| *v == 0.0))
    }

    /// `self += other`, allocating buffers as needed.
    pub fn accumulate(&mut self, other: &Upstream) {
        fn add(a: &mut Vec<f64>, b: &[f64]) {
            if b.is_empty() {
                return;
            }
            if a.is_empty() {
                a.resize(b.len(), 0.0);
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        add(&mut self.color, &other.color);
        add(&mut self.semantic, &other.semantic);
        add(&mut self.semantic_2d, &other.semantic_2d);
        add(&mut self.depth, &other.depth);
        add(&mut self.flow, &other.flow);
    }
}

/// Layout of the per-splat screen-space gradient record.
#[derive(Clone, Copy)]
struct Layout {
    classes: usize,
}

impl Layout {
    const MEAN: usize = 0;
    const CONIC: usize = 2; // dL/dQ, 4 entries row-major
    const OPACITY: usize = 6;
    const COLOR: usize = 7;
    const DEPTH: usize = 10;
    const FLOW: usize = 11;
    const PROBS: usize = 13;

    fn logits(&self) -> usize {
        Self::PROBS + self.classes
    }

    fn stride(&self) -> usize {
        Self::PROBS + 2 * self.classes
    }
}

/// Gradients for one camera frame, written into `grads` (accumulating).
///
/// `camera_index` selects the exposure slot of `grads.cameras`.
pub fn backward_into(
    scene: &SceneGraph,
    out: &RenderOutput,
    up: &Upstream,
    camera_index: usize,
    grads: &mut ParamGrads,
) -> Result<()> {
    let tape = out.tape.as_ref().ok_or(Error::MissingTape)?;
    let buf = &out.buffers;
    let n = buf.pixel_count();
    let s = buf.class_count;
    let rec = &out.record;
    let cam = &rec.camera;

    // Exposure: C' = A C + b.
    let color_up: Vec<f64> = if up.color.is_empty() {
        Vec::new()
    } else if rec.exposure_applied {
        let a = cam.exposure.a;
        let rows: Vec<(Matrix3<f64>, Vector3<f64>)> = (0..buf.height)
            .into_par_iter()
            .map(|py| {
                let mut da = Matrix3::zeros();
                let mut db = Vector3::zeros();
                for px in 0..buf.width {
                    let i = 3 * (py * buf.width + px);
                    let g = Vector3::new(up.color[i], up.color[i + 1], up.color[i + 2]);
                    let c = Vector3::new(buf.color[i], buf.color[i + 1], buf.color[i + 2]);
                    da += g * c.transpose();
                    db += g;
                }
                (da, db)
            })
            .collect();
        if let Some(slot) = grads.cameras.get_mut(camera_index) {
            for (da, db) in rows {
                slot.a += da;
                slot.b += db;
            }
        }
        let at = a.transpose();
        up.color
            .chunks_exact(3)
            .flat_map(|g| {
                let v = at * Vector3::new(g[0], g[1], g[2]);
                [v.x, v.y, v.z]
            })
            .collect()
    } else {
        up.color.clone()
    };

    // Composited logits of the 2D path: back through the per-pixel softmax.
    let logit_up: Vec<f64> = if up.semantic_2d.is_empty() || buf.semantic_2dnorm.is_empty() {
        Vec::new()
    } else {
        let mut v = vec![0.0; n * s];
        for p in 0..n {
            let probs = &buf.semantic_2dnorm[s * p..s * (p + 1)];
            let g = &up.semantic_2d[s * p..s * (p + 1)];
            let dot: f64 = probs.iter().zip(g).map(|(a, b)| a * b).sum();
            for k in 0..s {
                v[s * p + k] = probs[k] * (g[k] - dot);
            }
        }
        v
    };

    let layout = Layout { classes: s };
    let sem_up = if buf.semantic.is_empty() { &[][..] } else { &up.semantic[..] };
    let depth_up = if buf.depth.is_empty() { &[][..] } else { &up.depth[..] };
    let flow_up = if buf.flow.is_empty() { &[][..] } else { &up.flow[..] };
    let color_up_ref = if buf.color.is_empty() { &[][..] } else { &color_up[..] };
    let pix = PixelUpstream {
        color: color_up_ref,
        semantic: sem_up,
        logits: &logit_up,
        depth: depth_up,
        flow: flow_up,
        classes: s,
    };

    // Per-tile accumulation, merged in tile order.
    let tile_grads: Vec<Vec<f64>> = (0..out.grid.tile_count())
        .into_par_iter()
        .map(|tile| tile_backward(out, &tape.tiles[tile], tile, &pix, &scene.background, layout))
        .collect();
    let stride = layout.stride();
    let mut splat_grads = vec![0.0; out.splats.len() * stride];
    for (tile, local) in tile_grads.iter().enumerate() {
        for (slot, &idx) in out.grid.bins[tile].iter().enumerate() {
            let src = &local[slot * stride..(slot + 1) * stride];
            let dst = &mut splat_grads[idx as usize * stride..(idx as usize + 1) * stride];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
    }

    // Screen space to world-frame Gaussian gradients.
    let world_grads: Vec<WorldSplatGrad> = (0..out.splats.len())
        .into_par_iter()
        .map(|i| splat_backward(scene, out, i, &splat_grads[i * stride..(i + 1) * stride], layout))
        .collect();

    // World frame to scene parameters, in splat order.
    let n_obj = scene.objects.len();
    let mut pose_grads = vec![[0.0; 4]; n_obj];
    let mut flow_pose_grads = vec![[0.0; 4]; n_obj];
    for (i, wg) in world_grads.into_iter().enumerate() {
        let world = &rec.world[rec.splat_world[i] as usize];
        match world.source {
            Provenance::Static { index } => {
                let g = &mut grads.static_gaussians[index];
                g.mu += wg.mu + wg.mu_t2;
                add_appearance(g, &wg);
            }
            Provenance::Object { object, index, .. } => {
                let pose = rec.poses.poses[object];
                let mu_c = scene.objects[object].canonical[index].mu;
                let r = pose.rotation_matrix();
                let g = grads.gaussian_mut(GaussianRef::Object(object, index));
                g.mu += r.transpose() * wg.mu;
                add_appearance(g, &wg);
                let r_w = world.gaussian.rotation_matrix();
                let d_theta = (yaw_matrix_derivative(pose.theta) * mu_c).dot(&wg.mu)
                    + wg.rotation.dot(&(r_w.transpose() * Vector3::z()));
                let pg = &mut pose_grads[object];
                pg[0] += wg.mu.x;
                pg[1] += wg.mu.y;
                pg[2] += wg.mu.z;
                pg[3] += d_theta;
                if wg.mu_t2 != Vector3::zeros() {
                    if let Some(fp) = rec.flow_poses.as_ref() {
                        let p2 = fp.poses[object];
                        let g = grads.gaussian_mut(GaussianRef::Object(object, index));
                        g.mu += p2.rotation_matrix().transpose() * wg.mu_t2;
                        let fg = &mut flow_pose_grads[object];
                        fg[0] += wg.mu_t2.x;
                        fg[1] += wg.mu_t2.y;
                        fg[2] += wg.mu_t2.z;
                        fg[3] += (yaw_matrix_derivative(p2.theta) * mu_c).dot(&wg.mu_t2);
                    }
                }
            }
        }
    }
    for o in 0..n_obj {
        for (p, v) in rec.poses.jacobians[o].contract(&pose_grads[o]) {
            grads.objects[o].track.add(p, v);
        }
        if let Some(fp) = rec.flow_poses.as_ref() {
            for (p, v) in fp.jacobians[o].contract(&flow_pose_grads[o]) {
                grads.objects[o].track.add(p, v);
            }
        }
    }
    Ok(())
}

/// Gradients for one frame as a fresh [`ParamGrads`] with `cameras` exposure slots.
pub fn backward(
    scene: &SceneGraph,
    out: &RenderOutput,
    up: &Upstream,
    camera_index: usize,
    cameras: usize,
) -> Result<ParamGrads> {
    let mut g = ParamGrads::zeros(scene, cameras);
    backward_into(scene, out, up, camera_index, &mut g)?;
    Ok(g)
}

fn add_appearance(g: &mut GaussianGrad, w: &WorldSplatGrad) {
    g.rotation += w.rotation;
    g.log_scale += w.log_scale;
    g.opacity_logit += w.opacity_logit;
    for (a, b) in g.sh.iter_mut().zip(&w.sh) {
        for c in 0..3 {
            a[c] += b[c];
        }
    }
    for (a, b) in g.logits.iter_mut().zip(&w.logits) {
        *a += b;
    }
}

struct PixelUpstream<'a> {
    color: &'a [f64],
    semantic: &'a [f64],
    logits: &'a [f64],
    depth: &'a [f64],
    flow: &'a [f64],
    classes: usize,
}

fn tile_backward(
    out: &RenderOutput,
    tape: &TileTape,
    tile: usize,
    up: &PixelUpstream,
    background: &Vector3<f64>,
    layout: Layout,
) -> Vec<f64> {
    let grid = &out.grid;
    let bin = &grid.bins[tile];
    let stride = layout.stride();
    let s = up.classes;
    let mut acc = vec![0.0; bin.len() * stride];
    let (x0, y0, x1, y1) = grid.tile_pixels(tile);
    let tw = x1 - x0;
    for py in y0..y1 {
        for px in x0..x1 {
            let local = (py - y0) * tw + (px - x0);
            let entries = tape.pixel(local);
            if entries.is_empty() {
                continue;
            }
            let p = py * grid.width + px;
            let gc = if up.color.is_empty() {
                Vector3::zeros()
            } else {
                Vector3::new(up.color[3 * p], up.color[3 * p + 1], up.color[3 * p + 2])
            };
            let gs = if up.semantic.is_empty() { &[][..] } else { &up.semantic[s * p..s * (p + 1)] };
            let gl = if up.logits.is_empty() { &[][..] } else { &up.logits[s * p..s * (p + 1)] };
            let gd = if up.depth.is_empty() { 0.0 } else { up.depth[p] };
            let gf =
                if up.flow.is_empty() { Vector2::zeros() } else { Vector2::new(up.flow[2 * p], up.flow[2 * p + 1]) };
            if gc == Vector3::zeros()
                && gd == 0.0
                && gf == Vector2::zeros()
                && gs.iter().all(|v| *v == 0.0)
                && gl.iter().all(|v| *v == 0.0)
            {
                continue;
            }
            let x = pixel_center(px, py);
            let mut suffix = gc.dot(background) * tape.final_transmittance[local];
            for e in entries.iter().rev() {
                let splat: &Splat2D = &out.splats[e.splat as usize];
                let w = e.alpha * e.transmittance;
                let a = &mut acc[e.slot as usize * stride..(e.slot as usize + 1) * stride];
                let mut feat = gc.dot(&splat.color) + gd * splat.depth;
                for c in 0..3 {
                    a[Layout::COLOR + c] += gc[c] * w;
                }
                a[Layout::DEPTH] += gd * w;
                if let Some(f) = splat.flow {
                    feat += gf.dot(&f);
                    a[Layout::FLOW] += gf.x * w;
                    a[Layout::FLOW + 1] += gf.y * w;
                }
                if !gs.is_empty() {
                    for k in 0..s {
                        feat += gs[k] * splat.probs[k];
                        a[Layout::PROBS + k] += gs[k] * w;
                    }
                }
                if !gl.is_empty() {
                    let off = layout.logits();
                    for k in 0..s {
                        feat += gl[k] * splat.logits[k];
                        a[off + k] += gl[k] * w;
                    }
                }
                let d_alpha = e.transmittance * feat - suffix / (1.0 - e.alpha);
                suffix += feat * w;
                if e.clamped {
                    continue;
                }
                // alpha = o exp(-q/2), q = d^T Q d, d = x - mean
                let d = x - splat.mean2d;
                let gauss = e.alpha / splat.opacity;
                a[Layout::OPACITY] += d_alpha * gauss;
                let d_q = -0.5 * e.alpha * d_alpha;
                let qd = splat.conic * d;
                a[Layout::MEAN] += -2.0 * d_q * qd.x;
                a[Layout::MEAN + 1] += -2.0 * d_q * qd.y;
                a[Layout::CONIC] += d_q * d.x * d.x;
                a[Layout::CONIC + 1] += d_q * d.x * d.y;
                a[Layout::CONIC + 2] += d_q * d.y * d.x;
                a[Layout::CONIC + 3] += d_q * d.y * d.y;
            }
        }
    }
    acc
}

/// Gradients of one projected Gaussian with respect to its world-frame
/// parameters; `mu_t2` is the gradient of the flow-target position.
struct WorldSplatGrad {
    mu: Vector3<f64>,
    mu_t2: Vector3<f64>,
    rotation: Vector3<f64>,
    log_scale: Vector3<f64>,
    opacity_logit: f64,
    sh: Vec<[f64; 3]>,
    logits: Vec<f64>,
}

fn splat_backward(scene: &SceneGraph, out: &RenderOutput, i: usize, g: &[f64], layout: Layout) -> WorldSplatGrad {
    let rec = &out.record;
    let cam = &rec.camera;
    let splat = &out.splats[i];
    let detail = &rec.details[i];
    let world = &rec.world[rec.splat_world[i] as usize];
    let gauss = &world.gaussian;
    let s = layout.classes;

    // Conic to covariance: dSigma' = -Q dQ Q.
    let d_conic = Matrix2::new(g[Layout::CONIC], g[Layout::CONIC + 1], g[Layout::CONIC + 2], g[Layout::CONIC + 3]);
    let d_cov2 = -splat.conic * d_conic * splat.conic;
    let d_cov2 = 0.5 * (d_cov2 + d_cov2.transpose());

    // Sigma' = J M J^T (+ floor), M = W Sigma W^T.
    let j = detail.jacobian;
    let m = detail.cov_cam;
    let d_m = j.transpose() * d_cov2 * j;
    let d_j = 2.0 * d_cov2 * j * m;

    let p = detail.p_cam;
    let k = &cam.intrinsics;
    let (fx, sk, fy) = (k[(0, 0)], k[(0, 1)], k[(1, 1)]);
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut d_p = j.transpose() * Vector2::new(g[Layout::MEAN], g[Layout::MEAN + 1]);
    d_p.z += g[Layout::DEPTH];
    // J = [[fx/z, s/z, -(fx x + s y)/z^2], [0, fy/z, -fy y/z^2]]
    d_p.x += d_j[(0, 2)] * (-fx * iz2);
    d_p.y += d_j[(0, 2)] * (-sk * iz2) + d_j[(1, 2)] * (-fy * iz2);
    d_p.z += d_j[(0, 0)] * (-fx * iz2)
        + d_j[(0, 1)] * (-sk * iz2)
        + d_j[(0, 2)] * (2.0 * (fx * p.x + sk * p.y) * iz3)
        + d_j[(1, 1)] * (-fy * iz2)
        + d_j[(1, 2)] * (2.0 * fy * p.y * iz3);

    // Flow: f = proj2(mu_t2) - proj1(mu).
    let d_flow = Vector2::new(g[Layout::FLOW], g[Layout::FLOW + 1]);
    let mut mu_t2 = Vector3::zeros();
    if splat.flow.is_some() && d_flow != Vector2::zeros() {
        d_p -= j.transpose() * d_flow;
        if let (Some(fc), Some(fp)) = (rec.flow_camera.as_ref(), rec.flow_poses.as_ref()) {
            let p2 = fc.world_to_camera(&position_at(scene, world, fp));
            let j2 = fc.projection_jacobian(&p2);
            mu_t2 = fc.rotation.transpose() * (j2.transpose() * d_flow);
        }
    }

    let w = &cam.rotation;
    let mut d_mu = w.transpose() * d_p;

    // Color through SH, including the view direction.
    let d_color = Vector3::new(g[Layout::COLOR], g[Layout::COLOR + 1], g[Layout::COLOR + 2]);
    let mut d_sh = vec![[0.0; 3]; gauss.sh.len()];
    d_mu += sh::evaluate_sh_backward(&gauss.sh, &(gauss.mu - cam.center()), &d_color, &mut d_sh);

    // Sigma = R D R^T with D = diag(exp(2 log_scale)).
    let d_sigma = w.transpose() * d_m * w;
    let r = gauss.rotation_matrix();
    let dvals = gauss.log_scale.map(|v| (2.0 * v).exp());
    let rt_ds_r = r.transpose() * d_sigma * r;
    let log_scale =
        Vector3::new(2.0 * dvals.x * rt_ds_r[(0, 0)], 2.0 * dvals.y * rt_ds_r[(1, 1)], 2.0 * dvals.z * rt_ds_r[(2, 2)]);
    let d_r = 2.0 * d_sigma * r * Matrix3::from_diagonal(&dvals);
    let a = r.transpose() * d_r;
    let rotation = Vector3::new(a[(2, 1)] - a[(1, 2)], a[(0, 2)] - a[(2, 0)], a[(1, 0)] - a[(0, 1)]);

    let o = splat.opacity;
    let opacity_logit = g[Layout::OPACITY] * o * (1.0 - o);

    let mut logits = vec![0.0; s];
    if s > 0 {
        let probs = &splat.probs;
        let dp = &g[Layout::PROBS..Layout::PROBS + s];
        let dot: f64 = probs.iter().zip(dp).map(|(a, b)| a * b).sum();
        let direct = &g[layout.logits()..layout.logits() + s];
        for k in 0..s {
            logits[k] = probs[k] * (dp[k] - dot) + direct[k];
        }
    }
    WorldSplatGrad { mu: d_mu, mu_t2, rotation, log_scale, opacity_logit, sh: d_sh, logits }
}
