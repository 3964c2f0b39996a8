//! Synthetic scenes, pseudo ground truth, and experiment drivers.

pub mod ablation;
pub mod bench;
pub mod config;
pub mod output;
pub mod pseudo_gt;
pub mod random;
pub mod scene_gen;
pub mod train;

use crate::compositor::Modalities;
use crate::projection::ProjectionConfig;
use crate::render::RenderOptions;

/// Guard band used for every harness render, as a fraction of image size.
pub const GUARD_BAND: f64 = 0.3;

/// Render options used throughout the harness.
pub fn render_options(modalities: Modalities, exposure: bool) -> RenderOptions {
    RenderOptions {
        modalities,
        exposure,
        projection: ProjectionConfig { guard_band: GUARD_BAND, ..ProjectionConfig::default() },
        ..RenderOptions::default()
    }
}
