use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use holosplat_bench::{fixture, stage_options};
use holosplat_core::compositor::{composite, composite_brute_force};
use holosplat_core::harness::bench::STAGES;

fn stages(c: &mut Criterion) {
    let f = fixture(20_000, 256, 256).expect("bench scene");
    let mut group = c.benchmark_group("stages");
    group.sample_size(10);
    for (k, name) in STAGES.iter().enumerate() {
        let opts = stage_options(k);
        group.bench_function(*name, |b| b.iter(|| black_box(f.render(&opts).expect("render"))));
    }
    group.finish();
}

fn compositors(c: &mut Criterion) {
    let f = fixture(5_000, 128, 128).expect("bench scene");
    let opts = stage_options(4);
    let out = f.render(&opts).expect("render");
    let bg = f.scene.background;
    let k = f.scene.class_count;
    let m = opts.modalities;
    let mut group = c.benchmark_group("composite");
    group.sample_size(10);
    group.bench_function("tiled", |b| b.iter(|| black_box(composite(&out.grid, &out.splats, &bg, k, &m, false))));
    group.bench_function("brute_force", |b| {
        b.iter(|| black_box(composite_brute_force(128, 128, &out.splats, &bg, k, &m)))
    });
    group.finish();
}

criterion_group!(benches, stages, compositors);
criterion_main!(benches);
