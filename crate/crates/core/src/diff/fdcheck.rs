//! Central finite-difference verification of the analytic backward pass.
//!
//! The compositor has genuine discontinuities (the 1/255 cutoff, early
//! termination, the opacity clamp). A pixel whose contribution list changes
//! between the perturbed renders is excluded from both the numeric and the
//! analytic gradient of that sample, so the comparison is between two
//! derivatives of the same smooth function.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward::{backward, Upstream};
use super::grads::{perturb, ParamClass, ParamGrads, ParamId};
use crate::compositor::RenderBuffers;
use crate::error::Result;
use crate::render::{render_frame, RenderOptions, RenderOutput};
use crate::scene::{FrameCamera, SceneGraph};

/// A loss that is a sum of independent per-pixel terms.
pub trait PixelLoss: Sync {
    /// Loss over the pixels where `mask` is true (all pixels when `None`).
    fn value(&self, buffers: &RenderBuffers, mask: Option<&[bool]>) -> f64;
    /// Gradient of [`Self::value`] with respect to each buffer.
    fn gradient(&self, buffers: &RenderBuffers, mask: Option<&[bool]>) -> Upstream;
}

/// Weighted squared distance to random targets on every buffer.
#[derive(Clone, Debug)]
pub struct ProbeLoss {
    color: Vec<(f64, f64)>,
    semantic: Vec<(f64, f64)>,
    semantic_2d: Vec<(f64, f64)>,
    depth: Vec<(f64, f64)>,
    flow: Vec<(f64, f64)>,
}

impl ProbeLoss {
    /// Weights and targets for an image of `pixels` pixels and `classes` classes.
    pub fn new(pixels: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, lo: f64, hi: f64| -> Vec<(f64, f64)> {
            (0..n).map(|_| (rng.random_range(0.5..1.5), rng.random_range(lo..hi))).collect()
        };
        Self {
            color: draw(pixels * 3, 0.0, 1.0),
            semantic: draw(pixels * classes, 0.0, 1.0),
            semantic_2d: draw(pixels * classes, 0.0, 1.0),
            depth: draw(pixels, 2.0, 8.0),
            flow: draw(pixels * 2, -3.0, 3.0),
        }
    }

    fn color_of(buffers: &RenderBuffers) -> &[f64] {
        &buffers.color_exposed
    }
}

fn masked(mask: Option<&[bool]>, pixel: usize) -> bool {
    mask.is_none_or(|m| m[pixel])
}

fn probe_value(buf: &[f64], wt: &[(f64, f64)], channels: usize, mask: Option<&[bool]>) -> f64 {
    if buf.is_empty() || channels == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (i, (b, (w, t))) in buf.iter().zip(wt).enumerate() {
        if masked(mask, i / channels) && b.is_finite() {
            sum += 0.5 * w * (b - t) * (b - t);
        }
    }
    sum
}

fn probe_grad(buf: &[f64], wt: &[(f64, f64)], channels: usize, mask: Option<&[bool]>) -> Vec<f64> {
    if buf.is_empty() || channels == 0 {
        return Vec::new();
    }
    buf.iter()
        .zip(wt)
        .enumerate()
        .map(|(i, (b, (w, t)))| if masked(mask, i / channels) && b.is_finite() { w * (b - t) } else { 0.0 })
        .collect()
}

impl PixelLoss for ProbeLoss {
    fn value(&self, b: &RenderBuffers, mask: Option<&[bool]>) -> f64 {
        let s = b.class_count;
        probe_value(Self::color_of(b), &self.color, 3, mask)
            + probe_value(&b.semantic, &self.semantic, s, mask)
            + probe_value(&b.semantic_2dnorm, &self.semantic_2d, s, mask)
            + probe_value(&b.depth, &self.depth, 1, mask)
            + probe_value(&b.flow, &self.flow, 2, mask)
    }

    fn gradient(&self, b: &RenderBuffers, mask: Option<&[bool]>) -> Upstream {
        let s = b.class_count;
        Upstream {
            color: probe_grad(Self::color_of(b), &self.color, 3, mask),
            semantic: probe_grad(&b.semantic, &self.semantic, s, mask),
            semantic_2d: probe_grad(&b.semantic_2dnorm, &self.semantic_2d, s, mask),
            depth: probe_grad(&b.depth, &self.depth, 1, mask),
            flow: probe_grad(&b.flow, &self.flow, 2, mask),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FdConfig {
    pub h: f64,
    pub samples_per_class: usize,
    pub seed: u64,
    pub classes: Vec<ParamClass>,
    /// Parameters whose gradient magnitude is below this fraction of the
    /// largest in their class are not sampled (their numeric derivative is
    /// dominated by roundoff).
    pub min_relative_magnitude: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { h: 1e-4, samples_per_class: 8, seed: 0, classes: ParamClass::ALL.to_vec(), min_relative_magnitude: 1e-3 }
    }
}

#[derive(Clone, Debug)]
pub struct FdSample {
    pub id: ParamId,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// Pixels excluded because their contribution list changed.
    pub excluded_pixels: usize,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub samples: Vec<FdSample>,
}

impl FdReport {
    pub fn max_rel_error(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_error).fold(0.0, f64::max)
    }

    /// Worst error per parameter class present in the report.
    pub fn by_class(&self) -> Vec<(ParamClass, f64, usize)> {
        let mut out: Vec<(ParamClass, f64, usize)> = Vec::new();
        for s in &self.samples {
            let c = s.id.class();
            match out.iter_mut().find(|e| e.0 == c) {
                Some(e) => {
                    e.1 = e.1.max(s.rel_error);
                    e.2 += 1;
                }
                None => out.push((c, s.rel_error, 1)),
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }
}

pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / analytic.abs().max(1e-8)
}

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Per-pixel fingerprint of the contribution list (world Gaussian ids,
/// clamp flags, flow validity).
fn signatures(out: &RenderOutput) -> Vec<u64> {
    let grid = &out.grid;
    let mut sig = vec![0u64; grid.width * grid.height];
    let tape = out.tape.as_ref().expect("fd renders record a tape");
    for (tile, tt) in tape.tiles.iter().enumerate() {
        let (x0, y0, x1, y1) = grid.tile_pixels(tile);
        let tw = x1 - x0;
        for py in y0..y1 {
            for px in x0..x1 {
                let mut h = DefaultHasher::new();
                for e in tt.pixel((py - y0) * tw + (px - x0)) {
                    out.record.splat_world[e.splat as usize].hash(&mut h);
                    e.clamped.hash(&mut h);
                    out.splats[e.splat as usize].flow.is_some().hash(&mut h);
                }
                sig[py * grid.width + px] = h.finish();
            }
        }
    }
    sig
}

/// Compares analytic and central-difference gradients of `loss` on the
/// render of `cameras[frame]` (with flow towards `cameras[flow_to]`).
pub fn fd_check(
    scene: &SceneGraph,
    cameras: &[FrameCamera],
    frame: usize,
    flow_to: Option<usize>,
    opts: &RenderOptions,
    loss: &dyn PixelLoss,
    cfg: &FdConfig,
) -> Result<FdReport> {
    let opts = RenderOptions { record_tape: true, ..*opts };
    let render = |s: &SceneGraph, c: &[FrameCamera]| render_frame(s, &c[frame], flow_to.map(|k| &c[k]), &opts);
    let base = render(scene, cameras)?;
    let base_sig = signatures(&base);
    let up = loss.gradient(&base.buffers, None);
    let grads = backward(scene, &base, &up, frame, cameras.len())?;

    let ids = select(&grads, cfg);
    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let mut sp = scene.clone();
        let mut cp = cameras.to_vec();
        perturb(&mut sp, &mut cp, id, cfg.h);
        let plus = render(&sp, &cp)?;
        let mut sm = scene.clone();
        let mut cm = cameras.to_vec();
        perturb(&mut sm, &mut cm, id, -cfg.h);
        let minus = render(&sm, &cm)?;

        let (sp_sig, sm_sig) = (signatures(&plus), signatures(&minus));
        let mask: Vec<bool> =
            (0..base_sig.len()).map(|i| base_sig[i] == sp_sig[i] && base_sig[i] == sm_sig[i]).collect();
        let excluded = mask.iter().filter(|m| !**m).count();
        let (numeric, analytic) = if excluded == 0 {
            ((loss.value(&plus.buffers, None) - loss.value(&minus.buffers, None)) / (2.0 * cfg.h), grads.get(id))
        } else {
            let m = Some(&mask[..]);
            let up = loss.gradient(&base.buffers, m);
            let g = backward(scene, &base, &up, frame, cameras.len())?;
            ((loss.value(&plus.buffers, m) - loss.value(&minus.buffers, m)) / (2.0 * cfg.h), g.get(id))
        };
        samples.push(FdSample {
            id,
            analytic,
            numeric,
            rel_error: relative_error(numeric, analytic),
            excluded_pixels: excluded,
        });
    }
    Ok(FdReport { samples })
}

/// Deterministic per-class sample of parameters with non-negligible gradient.
fn select(grads: &ParamGrads, cfg: &FdConfig) -> Vec<ParamId> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut all: Vec<(ParamId, f64)> = Vec::new();
    grads.for_each(|id, v| all.push((id, v)));
    let mut out = Vec::new();
    for class in &cfg.classes {
        let of_class: Vec<(ParamId, f64)> = all.iter().filter(|(id, _)| id.class() == *class).cloned().collect();
        let peak = of_class.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
        let mut pool: Vec<ParamId> = if peak > 0.0 {
            of_class.iter().filter(|(_, v)| v.abs() >= cfg.min_relative_magnitude * peak).map(|(id, _)| *id).collect()
        } else {
            of_class.iter().map(|(id, _)| *id).collect()
        };
        pool.shuffle(&mut rng);
        out.extend(pool.into_iter().take(cfg.samples_per_class));
    }
    out
}
