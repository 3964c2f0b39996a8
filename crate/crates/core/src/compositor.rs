//! Front-to-back alpha compositing of screen-space splats into every modality.
//!
//! A single pass over each tile's sorted splat list fills color, semantic
//! distributions (per-splat softmax and the accumulated-logit variant), depth,
//! flow, and accumulated opacity, optionally recording the per-pixel
//! contribution list needed by the backward pass.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::projection::{depth_order, softmax, Splat2D, TileGrid, ALPHA_MAX, ALPHA_THRESHOLD};
use crate::scene::FrameCamera;

/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;

/// Which buffers a composite pass fills.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Modalities {
    pub rgb: bool,
    pub semantic: bool,
    pub semantic_2d: bool,
    pub depth: bool,
    pub flow: bool,
}

impl Modalities {
    pub const ALL: Modalities = Modalities { rgb: true, semantic: true, semantic_2d: true, depth: true, flow: true };
    pub const RGB: Modalities =
        Modalities { rgb: true, semantic: false, semantic_2d: false, depth: false, flow: false };
    pub const NONE: Modalities =
        Modalities { rgb: false, semantic: false, semantic_2d: false, depth: false, flow: false };
}

/// Per-pixel opacity of a splat at pixel coordinate `x`, clamped to [`ALPHA_MAX`].
#[inline]
pub fn pixel_alpha(splat: &Splat2D, x: &Vector2<f64>) -> f64 {
    pixel_alpha_raw(splat, x).min(ALPHA_MAX)
}

#[inline]
pub(crate) fn pixel_alpha_raw(splat: &Splat2D, x: &Vector2<f64>) -> f64 {
    let d = x - splat.mean2d;
    let q = splat.conic[(0, 0)] * d.x * d.x
        + (splat.conic[(0, 1)] + splat.conic[(1, 0)]) * d.x * d.y
        + splat.conic[(1, 1)] * d.y * d.y;
    splat.opacity * (-0.5 * q).exp()
}

#[inline]
pub fn pixel_center(px: usize, py: usize) -> Vector2<f64> {
    Vector2::new(px as f64 + 0.5, py as f64 + 0.5)
}

/// One recorded contribution: splat index, its per-pixel opacity, and the
/// transmittance in front of it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TapeEntry {
    pub splat: u32,
    /// Position of the splat in its tile bin.
    pub slot: u32,
    pub alpha: f64,
    pub transmittance: f64,
    /// Whether `alpha` hit the upper clamp (zero gradient).
    pub clamped: bool,
}

/// Contribution lists for the pixels of one tile, row-major within the tile.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TileTape {
    pub starts: Vec<u32>,
    pub entries: Vec<TapeEntry>,
    pub final_transmittance: Vec<f64>,
}

impl TileTape {
    pub fn pixel(&self, i: usize) -> &[TapeEntry] {
        &self.entries[self.starts[i] as usize..self.starts[i + 1] as usize]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tape {
    pub tiles: Vec<TileTape>,
}

/// Rendered buffers; a disabled modality leaves its buffer empty.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    pub class_count: usize,
    /// `H x W x 3`, pre-exposure.
    pub color: Vec<f64>,
    /// `H x W x 3`, after the exposure affine (equal to `color` when disabled).
    pub color_exposed: Vec<f64>,
    /// `H x W x S`, per-splat softmax composited.
    pub semantic: Vec<f64>,
    /// `H x W x S`, softmax of composited logits.
    pub semantic_2dnorm: Vec<f64>,
    /// `H x W x S`, composited raw logits (pre-softmax of the 2D path).
    pub semantic_logits: Vec<f64>,
    /// `H x W`; `+inf` where nothing was composited.
    pub depth: Vec<f64>,
    /// `H x W x 2`.
    pub flow: Vec<f64>,
    /// `H x W`.
    pub accum_alpha: Vec<f64>,
    /// Per pixel, the sum of compositing weights (for the conservation check).
    pub weight_sum: Vec<f64>,
}

impl RenderBuffers {
    fn empty(width: usize, height: usize, class_count: usize, m: &Modalities) -> Self {
        let n = width * height;
        let sized = |on: bool, c: usize| if on { vec![0.0; n * c] } else { Vec::new() };
        Self {
            width,
            height,
            class_count,
            color: sized(m.rgb, 3),
            color_exposed: Vec::new(),
            semantic: sized(m.semantic, class_count),
            semantic_2dnorm: sized(m.semantic_2d, class_count),
            semantic_logits: sized(m.semantic_2d, class_count),
            depth: sized(m.depth, 1),
            flow: sized(m.flow, 2),
            accum_alpha: vec![0.0; n],
            weight_sum: vec![0.0; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Argmax label per pixel of the chosen semantic buffer.
    pub fn labels(&self, two_d: bool) -> Vec<u32> {
        let buf = if two_d { &self.semantic_2dnorm } else { &self.semantic };
        let s = self.class_count;
        buf.chunks_exact(s).map(|p| crate::scene::gaussian::argmax(p) as u32).collect()
    }
}

/// Per-pixel accumulator shared by the tiled and brute-force paths so both
/// perform identical arithmetic.
struct PixelAccum<'a> {
    m: &'a Modalities,
    t: f64,
    color: Vector3<f64>,
    sem: Vec<f64>,
    logit: Vec<f64>,
    depth: f64,
    flow: Vector2<f64>,
    weights: f64,
    any: bool,
}

impl<'a> PixelAccum<'a> {
    fn new(m: &'a Modalities, classes: usize) -> Self {
        Self {
            m,
            t: 1.0,
            color: Vector3::zeros(),
            sem: if m.semantic { vec![0.0; classes] } else { Vec::new() },
            logit: if m.semantic_2d { vec![0.0; classes] } else { Vec::new() },
            depth: 0.0,
            flow: Vector2::zeros(),
            weights: 0.0,
            any: false,
        }
    }

    /// Adds one splat; returns `false` once compositing should stop.
    #[inline]
    fn add(&mut self, idx: u32, slot: u32, s: &Splat2D, x: &Vector2<f64>, tape: Option<&mut Vec<TapeEntry>>) -> bool {
        let d = x - s.mean2d;
        let q =
            s.conic[(0, 0)] * d.x * d.x + (s.conic[(0, 1)] + s.conic[(1, 0)]) * d.x * d.y + s.conic[(1, 1)] * d.y * d.y;
        // Well outside the cutoff contour the opacity is below threshold; the
        // margin leaves borderline pixels to the exact test.
        if q > s.extent_sq * (1.0 + 1e-9) + 1e-9 {
            return true;
        }
        let raw = s.opacity * (-0.5 * q).exp();
        if raw < ALPHA_THRESHOLD {
            return true;
        }
        let alpha = raw.min(ALPHA_MAX);
        let w = alpha * self.t;
        if let Some(tape) = tape {
            tape.push(TapeEntry { splat: idx, slot, alpha, transmittance: self.t, clamped: raw > ALPHA_MAX });
        }
        self.any = true;
        self.weights += w;
        if self.m.rgb {
            self.color += s.color * w;
        }
        if self.m.semantic {
            for (acc, p) in self.sem.iter_mut().zip(&s.probs) {
                *acc += p * w;
            }
        }
        if self.m.semantic_2d {
            for (acc, l) in self.logit.iter_mut().zip(&s.logits) {
                *acc += l * w;
            }
        }
        if self.m.depth {
            self.depth += s.depth * w;
        }
        if self.m.flow {
            if let Some(f) = s.flow {
                self.flow += f * w;
            }
        }
        self.t *= 1.0 - alpha;
        self.t >= TRANSMITTANCE_EPS
    }

    fn write(&self, out: &mut RenderBuffers, pix: usize, background: &Vector3<f64>) {
        let s = out.class_count;
        if self.m.rgb {
            let c = self.color + background * self.t;
            out.color[3 * pix..3 * pix + 3].copy_from_slice(c.as_slice());
        }
        if self.m.semantic {
            out.semantic[s * pix..s * (pix + 1)].copy_from_slice(&self.sem);
        }
        if self.m.semantic_2d {
            out.semantic_logits[s * pix..s * (pix + 1)].copy_from_slice(&self.logit);
            out.semantic_2dnorm[s * pix..s * (pix + 1)].copy_from_slice(&softmax(&self.logit));
        }
        if self.m.depth {
            out.depth[pix] = if self.any { self.depth } else { f64::INFINITY };
        }
        if self.m.flow {
            out.flow[2 * pix] = self.flow.x;
            out.flow[2 * pix + 1] = self.flow.y;
        }
        out.accum_alpha[pix] = 1.0 - self.t;
        out.weight_sum[pix] = self.weights;
    }
}

/// Buffers for a single tile, scattered into the full image afterwards.
struct TileResult {
    buffers: RenderBuffers,
    tape: Option<TileTape>,
}

/// Composites every modality over the tile bins.
pub fn composite(
    grid: &TileGrid,
    splats: &[Splat2D],
    background: &Vector3<f64>,
    class_count: usize,
    modalities: &Modalities,
    record_tape: bool,
) -> (RenderBuffers, Option<Tape>) {
    let results: Vec<TileResult> = (0..grid.tile_count())
        .into_par_iter()
        .map(|tile| {
            let (x0, y0, x1, y1) = grid.tile_pixels(tile);
            let (tw, th) = (x1 - x0, y1 - y0);
            let mut buffers = RenderBuffers::empty(tw, th, class_count, modalities);
            let mut tape = record_tape.then(|| TileTape {
                starts: Vec::with_capacity(tw * th + 1),
                entries: Vec::new(),
                final_transmittance: Vec::with_capacity(tw * th),
            });
            let bin = &grid.bins[tile];
            for py in y0..y1 {
                for px in x0..x1 {
                    let x = pixel_center(px, py);
                    let mut acc = PixelAccum::new(modalities, class_count);
                    if let Some(t) = tape.as_mut() {
                        t.starts.push(t.entries.len() as u32);
                    }
                    for (slot, &idx) in bin.iter().enumerate() {
                        let entries = tape.as_mut().map(|t| &mut t.entries);
                        if !acc.add(idx, slot as u32, &splats[idx as usize], &x, entries) {
                            break;
                        }
                    }
                    if let Some(t) = tape.as_mut() {
                        t.final_transmittance.push(acc.t);
                    }
                    acc.write(&mut buffers, (py - y0) * tw + (px - x0), background);
                }
            }
            if let Some(t) = tape.as_mut() {
                t.starts.push(t.entries.len() as u32);
            }
            TileResult { buffers, tape }
        })
        .collect();

    let mut out = RenderBuffers::empty(grid.width, grid.height, class_count, modalities);
    let mut tiles = Vec::with_capacity(results.len());
    for (tile, r) in results.into_iter().enumerate() {
        let (x0, y0, x1, y1) = grid.tile_pixels(tile);
        let tw = x1 - x0;
        for py in y0..y1 {
            let src = (py - y0) * tw;
            let dst = py * grid.width + x0;
            copy_rows(&r.buffers, &mut out, src, dst, tw);
        }
        if let Some(t) = r.tape {
            tiles.push(t);
        }
    }
    out.color_exposed = out.color.clone();
    (out, record_tape.then_some(Tape { tiles }))
}

fn copy_rows(src: &RenderBuffers, dst: &mut RenderBuffers, s: usize, d: usize, n: usize) {
    fn cp(a: &[f64], b: &mut [f64], s: usize, d: usize, n: usize, c: usize) {
        if !a.is_empty() {
            b[d * c..(d + n) * c].copy_from_slice(&a[s * c..(s + n) * c]);
        }
    }
    let k = src.class_count;
    cp(&src.color, &mut dst.color, s, d, n, 3);
    cp(&src.semantic, &mut dst.semantic, s, d, n, k);
    cp(&src.semantic_2dnorm, &mut dst.semantic_2dnorm, s, d, n, k);
    cp(&src.semantic_logits, &mut dst.semantic_logits, s, d, n, k);
    cp(&src.depth, &mut dst.depth, s, d, n, 1);
    cp(&src.flow, &mut dst.flow, s, d, n, 2);
    cp(&src.accum_alpha, &mut dst.accum_alpha, s, d, n, 1);
    cp(&src.weight_sum, &mut dst.weight_sum, s, d, n, 1);
}

/// Reference compositor: every pixel visits every splat in global depth order.
pub fn composite_brute_force(
    width: usize,
    height: usize,
    splats: &[Splat2D],
    background: &Vector3<f64>,
    class_count: usize,
    modalities: &Modalities,
) -> RenderBuffers {
    let order = depth_order(splats);
    let rows: Vec<RenderBuffers> = (0..height)
        .into_par_iter()
        .map(|py| {
            let mut row = RenderBuffers::empty(width, 1, class_count, modalities);
            for px in 0..width {
                let x = pixel_center(px, py);
                let mut acc = PixelAccum::new(modalities, class_count);
                for (slot, &idx) in order.iter().enumerate() {
                    if !acc.add(idx, slot as u32, &splats[idx as usize], &x, None) {
                        break;
                    }
                }
                acc.write(&mut row, px, background);
            }
            row
        })
        .collect();
    let mut out = RenderBuffers::empty(width, height, class_count, modalities);
    for (py, row) in rows.iter().enumerate() {
        copy_rows(row, &mut out, 0, py * width, width);
    }
    out.color_exposed = out.color.clone();
    out
}

/// Applies `C' = A C + b` to every pixel of an interleaved RGB image.
pub fn apply_exposure(color: &[f64], a: &Matrix3<f64>, b: &Vector3<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(color.len());
    for px in color.chunks_exact(3) {
        let c = a * Vector3::new(px[0], px[1], px[2]) + b;
        out.extend_from_slice(c.as_slice());
    }
    out
}

/// Screen-space motion of a Gaussian center between two frames.
///
/// `mu_t2` is the center at the second timestamp (equal to `mu_t1` for static
/// Gaussians). Returns `None` when the center is behind either camera.
pub fn splat_flow(
    mu_t1: &Vector3<f64>,
    mu_t2: &Vector3<f64>,
    cam_t1: &FrameCamera,
    cam_t2: &FrameCamera,
    near: f64,
) -> Option<Vector2<f64>> {
    let p1 = cam_t1.world_to_camera(mu_t1);
    let p2 = cam_t2.world_to_camera(mu_t2);
    if p1.z <= near || p2.z <= near {
        return None;
    }
    Some(cam_t2.project_camera_point(&p2) - cam_t1.project_camera_point(&p1))
}
