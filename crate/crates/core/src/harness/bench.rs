//! Stage-by-stage render timing and the tiled versus brute-force comparison.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::render_options;
use super::scene_gen::{gen_scene, GeneratedScene};
use crate::compositor::{composite_brute_force, Modalities, RenderBuffers};
use crate::error::{Error, Result};
use crate::render::{render_frame, RenderOutput};

/// Stage names in the order components are enabled.
pub const STAGES: [&str; 5] = ["pre", "+rgb", "+affine", "+semantic", "+flow"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    /// Time added by this stage over the previous one.
    pub incremental_ms: f64,
    /// Time per frame with every stage up to this one enabled.
    pub cumulative_ms: f64,
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub gaussians: usize,
    /// Splats surviving projection and culling.
    pub splats: usize,
    pub repeats: usize,
    pub stages: Vec<StageTiming>,
    /// Color bits identical across every stage after `+rgb`.
    pub rgb_unchanged: bool,
    /// Compositing time of the tiled renderer with every modality enabled.
    pub tiled_ms: f64,
    pub brute_force_ms: Option<f64>,
    pub speedup: Option<f64>,
    /// Largest per-channel difference between tiled and brute-force buffers.
    pub max_abs_diff: Option<f64>,
}

/// Largest absolute difference over every buffer both renders filled.
pub fn max_buffer_diff(a: &RenderBuffers, b: &RenderBuffers) -> Result<f64> {
    let pairs = [
        (&a.color, &b.color),
        (&a.semantic, &b.semantic),
        (&a.semantic_2dnorm, &b.semantic_2dnorm),
        (&a.semantic_logits, &b.semantic_logits),
        (&a.depth, &b.depth),
        (&a.flow, &b.flow),
        (&a.accum_alpha, &b.accum_alpha),
        (&a.weight_sum, &b.weight_sum),
    ];
    let mut worst: f64 = 0.0;
    for (x, y) in pairs {
        if x.len() != y.len() {
            return Err(Error::Dimension(format!("buffer of {} vs {} values", x.len(), y.len())));
        }
        for (u, v) in x.iter().zip(y) {
            worst = worst.max((u - v).abs());
        }
    }
    Ok(worst)
}

/// The street scene at the bench image size with its Gaussian budget scaled
/// to `cfg.bench.splats`.
pub fn bench_scene(cfg: &ExperimentConfig) -> Result<GeneratedScene> {
    let b = &cfg.bench;
    let mut c = cfg.clone();
    c.width = b.width;
    c.height = b.height;
    let s = &mut c.scene;
    let n = b.splats;
    s.ground = n * 2 / 5;
    s.per_building = n * 3 / 10 / s.buildings.max(1);
    s.backdrop = n / 5;
    s.per_object = (n / 10).checked_div(s.objects).unwrap_or(0);
    gen_scene(&c)
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

fn stage_modalities(stage: usize) -> (Modalities, bool) {
    let m = Modalities { rgb: stage >= 1, semantic: stage >= 3, semantic_2d: false, depth: false, flow: stage >= 4 };
    (m, stage >= 2)
}

/// Times each stage over `cfg.bench.repeats` renders (median). A stage's
/// cumulative time is never reported below the previous stage's, so a
/// component cheaper than the timing noise shows as zero added time.
pub fn run_bench(cfg: &ExperimentConfig) -> Result<BenchReport> {
    let b = &cfg.bench;
    if b.repeats == 0 || b.splats == 0 {
        return Err(Error::Invalid("bench needs at least one repeat and one Gaussian".into()));
    }
    let gen = bench_scene(cfg)?;
    let (cam, next) = (&gen.cameras[0], &gen.cameras[1]);
    let mut stages = Vec::with_capacity(STAGES.len());
    let mut colors: Vec<Vec<f64>> = Vec::new();
    let mut last: Option<RenderOutput> = None;
    let mut prev = 0.0;
    for (k, name) in STAGES.iter().enumerate() {
        let (m, exposure) = stage_modalities(k);
        let opts = render_options(m, exposure);
        let flow_cam = m.flow.then_some(next);
        let mut times = Vec::with_capacity(b.repeats);
        let mut out = None;
        for _ in 0..b.repeats {
            let start = Instant::now();
            let o = render_frame(&gen.scene, cam, flow_cam, &opts)?;
            let total = start.elapsed();
            times.push(if k == 0 { o.timings.preparation } else { total });
            out = Some(o);
        }
        let out = out.expect("at least one repeat");
        let ms = (median(times).as_secs_f64() * 1e3).max(prev);
        stages.push(StageTiming {
            stage: name.to_string(),
            incremental_ms: ms - prev,
            cumulative_ms: ms,
            fps: if ms > 0.0 { 1e3 / ms } else { f64::INFINITY },
        });
        prev = ms;
        if k >= 1 {
            colors.push(out.buffers.color.clone());
        }
        last = Some(out);
    }
    let full = last.expect("five stages");
    let rgb_unchanged = colors.windows(2).all(|w| w[0] == w[1]);
    let tiled_ms = full.timings.compositing.as_secs_f64() * 1e3;
    let (brute_force_ms, speedup, max_abs_diff) = if b.brute_force {
        let (m, _) = stage_modalities(4);
        let start = Instant::now();
        let reference = composite_brute_force(
            cam.width,
            cam.height,
            &full.splats,
            &gen.scene.background,
            gen.scene.class_count,
            &m,
        );
        let bf = start.elapsed().as_secs_f64() * 1e3;
        let diff = max_buffer_diff(&full.buffers, &reference)?;
        (Some(bf), Some(bf / tiled_ms.max(1e-9)), Some(diff))
    } else {
        (None, None, None)
    };
    Ok(BenchReport {
        width: cam.width,
        height: cam.height,
        gaussians: gen.scene.gaussian_count(),
        splats: full.splats.len(),
        repeats: b.repeats,
        stages,
        rgb_unchanged,
        tiled_ms,
        brute_force_ms,
        speedup,
        max_abs_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.bench.splats = 600;
        c.bench.width = 48;
        c.bench.height = 32;
        c.bench.repeats = 1;
        c
    }

    #[test]
    fn stages_are_cumulative_and_match_the_oracle() {
        let r = run_bench(&small()).unwrap();
        let names: Vec<&str> = r.stages.iter().map(|s| s.stage.as_str()).collect();
        assert_eq!(names, STAGES);
        assert!(r.stages.windows(2).all(|w| w[1].cumulative_ms >= w[0].cumulative_ms));
        assert!(r.stages.iter().all(|s| s.incremental_ms >= 0.0));
        assert!(r.rgb_unchanged);
        assert!(r.max_abs_diff.unwrap() <= 1e-6);
        assert!(r.splats > 0 && r.splats <= r.gaussians);
    }

    #[test]
    fn scene_budget_is_close_to_request() {
        let c = small();
        let g = bench_scene(&c).unwrap();
        let n = g.scene.gaussian_count();
        assert!(n <= c.bench.splats && n + 20 >= c.bench.splats, "{n}");
    }

    #[test]
    fn zero_repeats_is_invalid() {
        let mut c = small();
        c.bench.repeats = 0;
        assert_eq!(run_bench(&c).unwrap_err().kind(), "invalid");
    }
}
