//! Fixtures shared by the render benchmarks.

use holosplat_core::compositor::Modalities;
use holosplat_core::harness::bench::bench_scene;
use holosplat_core::harness::config::ExperimentConfig;
use holosplat_core::harness::render_options;
use holosplat_core::render::{render_frame, RenderOptions, RenderOutput};
use holosplat_core::scene::{FrameCamera, SceneGraph};
use holosplat_core::Result;

pub struct Fixture {
    pub scene: SceneGraph,
    pub camera: FrameCamera,
    pub next: FrameCamera,
}

/// Street scene with `splats` Gaussians seen at `width`×`height`.
pub fn fixture(splats: usize, width: usize, height: usize) -> Result<Fixture> {
    let mut cfg = ExperimentConfig::default();
    cfg.bench.splats = splats;
    cfg.bench.width = width;
    cfg.bench.height = height;
    let gen = bench_scene(&cfg)?;
    let mut cams = gen.cameras.into_iter();
    let camera = cams.next().expect("generated rigs have at least two frames");
    let next = cams.next().expect("generated rigs have at least two frames");
    Ok(Fixture { scene: gen.scene, camera, next })
}

/// Options of the incremental stage `k` (0 = preparation only, 4 = every
/// modality with flow).
pub fn stage_options(k: usize) -> RenderOptions {
    let m = Modalities { rgb: k >= 1, semantic: k >= 3, semantic_2d: false, depth: false, flow: k >= 4 };
    render_options(m, k >= 2)
}

impl Fixture {
    pub fn render(&self, opts: &RenderOptions) -> Result<RenderOutput> {
        let next = opts.modalities.flow.then_some(&self.next);
        render_frame(&self.scene, &self.camera, next, opts)
    }
}
