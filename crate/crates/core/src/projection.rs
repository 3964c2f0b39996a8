//! Per-frame geometric stage: EWA projection of 3D Gaussians to screen-space
//! splats, frustum culling, depth ordering, and tile binning.

use std::cmp::Ordering;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::scene::gaussian::covariance_of;
use crate::scene::{FrameCamera, Gaussian3D, Provenance};
use crate::sh;

/// Camera-space depth at or below which a Gaussian is culled (meters).
pub const NEAR_PLANE: f64 = 0.01;
/// Dilation added to the 2D covariance diagonal (px^2).
pub const COV_FLOOR: f64 = 0.3;
/// Per-pixel opacities below this contribute nothing.
pub const ALPHA_THRESHOLD: f64 = 1.0 / 255.0;
/// Per-pixel opacities are clamped to this value.
pub const ALPHA_MAX: f64 = 0.999;
pub const DEFAULT_TILE_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionConfig {
    pub near: f64,
    pub cov_floor: f64,
    /// Culls splats whose center projects farther outside the image than
    /// this fraction of its size. The linearized footprint of a Gaussian
    /// close to the camera and far off-axis can be orders of magnitude larger
    /// than its true extent.
    pub guard_band: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { near: NEAR_PLANE, cov_floor: COV_FLOOR, guard_band: f64::INFINITY }
    }
}

/// A Gaussian projected into one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    /// Regularized screen-space covariance.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    /// Camera-space z (meters).
    pub depth: f64,
    /// Post-sigmoid opacity.
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub logits: Vec<f64>,
    /// Softmax of `logits`.
    pub probs: Vec<f64>,
    /// Screen-space motion to the paired frame; `None` when invalid.
    pub flow: Option<Vector2<f64>>,
    pub source: Provenance,
    /// Squared Mahalanobis radius of the `ALPHA_THRESHOLD` iso-contour.
    pub extent_sq: f64,
}

impl Splat2D {
    /// Builds a splat from screen-space quantities; `cov2d` must be positive definite.
    pub fn new(
        mean2d: Vector2<f64>,
        cov2d: Matrix2<f64>,
        depth: f64,
        opacity: f64,
        color: Vector3<f64>,
        logits: Vec<f64>,
    ) -> Self {
        let conic = inverse_sym2(&cov2d);
        let probs = softmax(&logits);
        Self {
            mean2d,
            cov2d,
            conic,
            depth,
            opacity,
            color,
            logits,
            probs,
            flow: None,
            source: Provenance::Static { index: 0 },
            extent_sq: extent_sq(opacity),
        }
    }

    /// Half-widths of the axis-aligned box around the cutoff ellipse.
    pub fn half_extent(&self) -> Vector2<f64> {
        let r2 = self.extent_sq.max(0.0);
        Vector2::new((r2 * self.cov2d[(0, 0)]).sqrt(), (r2 * self.cov2d[(1, 1)]).sqrt())
    }

    /// Whether the cutoff ellipse touches the closed rectangle `[x0, x1] x [y0, y1]`.
    pub fn touches_rect(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
        if self.extent_sq < 0.0 {
            return false;
        }
        // Slightly inflated so that binning is never stricter than the per-pixel test.
        let r2 = self.extent_sq * (1.0 + 1e-9) + 1e-9;
        min_quadratic_over_rect(&self.mean2d, &self.conic, x0, y0, x1, y1) <= r2
    }
}

/// Squared Mahalanobis radius where `opacity * exp(-q/2)` falls to the threshold;
/// negative when the splat can never reach it.
pub fn extent_sq(opacity: f64) -> f64 {
    if opacity <= ALPHA_THRESHOLD {
        -1.0
    } else {
        2.0 * (opacity / ALPHA_THRESHOLD).ln()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    if logits.is_empty() {
        return Vec::new();
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn inverse_sym2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let inv = 1.0 / det;
    Matrix2::new(m[(1, 1)] * inv, -m[(0, 1)] * inv, -m[(1, 0)] * inv, m[(0, 0)] * inv)
}

/// Minimum of `(x - c)^T Q (x - c)` over a closed rectangle, for positive definite `Q`.
fn min_quadratic_over_rect(c: &Vector2<f64>, q: &Matrix2<f64>, x0: f64, y0: f64, x1: f64, y1: f64) -> f64 {
    if c.x >= x0 && c.x <= x1 && c.y >= y0 && c.y <= y1 {
        return 0.0;
    }
    let (a, b, d) = (q[(0, 0)], 0.5 * (q[(0, 1)] + q[(1, 0)]), q[(1, 1)]);
    let form = |dx: f64, dy: f64| a * dx * dx + 2.0 * b * dx * dy + d * dy * dy;
    let mut best = f64::INFINITY;
    // Vertical edges: dx fixed, minimize over dy.
    for x in [x0, x1] {
        let dx = x - c.x;
        let dy = (-b * dx / d).clamp(y0 - c.y, y1 - c.y);
        best = best.min(form(dx, dy));
    }
    for y in [y0, y1] {
        let dy = y - c.y;
        let dx = (-b * dy / a).clamp(x0 - c.x, x1 - c.x);
        best = best.min(form(dx, dy));
    }
    best
}

/// Intermediate quantities of a projection, reused by the backward pass.
#[derive(Clone, Debug)]
pub struct ProjectionDetail {
    pub p_cam: Vector3<f64>,
    pub jacobian: nalgebra::Matrix2x3<f64>,
    /// `W Sigma W^T`.
    pub cov_cam: Matrix3<f64>,
}

/// Projects a world-frame Gaussian; `None` when culled.
pub fn project_gaussian(g: &Gaussian3D, cam: &FrameCamera, cfg: &ProjectionConfig) -> Option<Splat2D> {
    project_gaussian_detailed(g, cam, cfg).map(|(s, _)| s)
}

pub fn project_gaussian_detailed(
    g: &Gaussian3D,
    cam: &FrameCamera,
    cfg: &ProjectionConfig,
) -> Option<(Splat2D, ProjectionDetail)> {
    let p = cam.world_to_camera(&g.mu);
    if p.z <= cfg.near {
        return None;
    }
    let opacity = g.opacity();
    if opacity <= ALPHA_THRESHOLD {
        return None;
    }
    let j = cam.projection_jacobian(&p);
    let w = &cam.rotation;
    let cov_cam = w * covariance_of(g) * w.transpose();
    let raw = j * cov_cam * j.transpose();
    let mut cov2d = 0.5 * (raw + raw.transpose());
    cov2d[(0, 0)] += cfg.cov_floor;
    cov2d[(1, 1)] += cfg.cov_floor;
    let det = cov2d.determinant();
    if !det.is_finite() || det <= 0.0 {
        return None;
    }
    let mean2d = cam.project_camera_point(&p);
    let (w, h) = (cam.width as f64, cam.height as f64);
    let g_band = cfg.guard_band;
    if mean2d.x < -g_band * w
        || mean2d.x > (1.0 + g_band) * w
        || mean2d.y < -g_band * h
        || mean2d.y > (1.0 + g_band) * h
    {
        return None;
    }
    let dir = (g.mu - cam.center()).normalize();
    let color = sh::evaluate_sh(&g.sh, &dir);
    let mut splat = Splat2D::new(mean2d, cov2d, p.z, opacity, color, g.logits.clone());
    if !splat.touches_rect(0.0, 0.0, w, h) {
        return None;
    }
    splat.flow = None;
    Some((splat, ProjectionDetail { p_cam: p, jacobian: j, cov_cam }))
}

/// Per-tile front-to-back splat lists.
#[derive(Clone, Debug, PartialEq)]
pub struct TileGrid {
    pub tile_size: usize,
    pub width: usize,
    pub height: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub bins: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Pixel bounds `(x0, y0, x1, y1)` (exclusive end) of a tile.
    pub fn tile_pixels(&self, tile: usize) -> (usize, usize, usize, usize) {
        tile_pixels(tile, self.tiles_x, self.tile_size, self.width, self.height)
    }
}

fn tile_pixels(tile: usize, tiles_x: usize, ts: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let x0 = tx * ts;
    let y0 = ty * ts;
    (x0, y0, (x0 + ts).min(width), (y0 + ts).min(height))
}

/// Global front-to-back order: by depth, ties broken by index.
pub fn depth_order(splats: &[Splat2D]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        splats[a as usize].depth.total_cmp(&splats[b as usize].depth).then_with(|| a.cmp(&b))
    });
    order
}

/// Tiles whose rectangle meets the splat's cutoff ellipse.
pub fn tiles_for_splat(s: &Splat2D, width: usize, height: usize, tile_size: usize) -> Vec<u32> {
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    if s.extent_sq < 0.0 {
        return Vec::new();
    }
    let he = s.half_extent();
    let ts = tile_size as f64;
    let clamp_tile = |v: f64, n: usize| -> Option<usize> {
        if v < 0.0 {
            Some(0)
        } else if v.is_finite() {
            Some(((v / ts).floor() as usize).min(n - 1))
        } else {
            None
        }
    };
    let (Some(tx0), Some(ty0), Some(tx1), Some(ty1)) = (
        clamp_tile(s.mean2d.x - he.x - 1.0, tiles_x),
        clamp_tile(s.mean2d.y - he.y - 1.0, tiles_y),
        clamp_tile(s.mean2d.x + he.x + 1.0, tiles_x),
        clamp_tile(s.mean2d.y + he.y + 1.0, tiles_y),
    ) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for ty in ty0..=ty1 {
        for tx in tx0..=tx1 {
            let tile = ty * tiles_x + tx;
            let (x0, y0, x1, y1) = tile_pixels(tile, tiles_x, tile_size, width, height);
            if s.touches_rect(x0 as f64, y0 as f64, x1 as f64, y1 as f64) {
                out.push(tile as u32);
            }
        }
    }
    out
}

/// Bins splats into tiles; every bin is sorted front-to-back.
///
/// Output is independent of the worker count: per-splat tile lists are
/// computed in parallel, then appended sequentially in global depth order.
pub fn bin_tiles(splats: &[Splat2D], width: usize, height: usize, tile_size: usize) -> TileGrid {
    assert!(tile_size.is_power_of_two(), "tile size must be a power of two");
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let per_splat: Vec<Vec<u32>> = splats.par_iter().map(|s| tiles_for_splat(s, width, height, tile_size)).collect();
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    for idx in depth_order(splats) {
        for &t in &per_splat[idx as usize] {
            bins[t as usize].push(idx);
        }
    }
    TileGrid { tile_size, width, height, tiles_x, tiles_y, bins }
}

/// Orders two splats front-to-back.
pub fn front_to_back(a: (usize, &Splat2D), b: (usize, &Splat2D)) -> Ordering {
    a.1.depth.total_cmp(&b.1.depth).then_with(|| a.0.cmp(&b.0))
}
