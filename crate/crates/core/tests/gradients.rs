use holosplat_core::diff::{fd_check, FdConfig, ParamClass, ProbeLoss};
use holosplat_core::harness::random::{random_scene, RandomSceneSpec};
use holosplat_core::render::RenderOptions;

#[test]
fn analytic_gradients_match_finite_differences() {
    let spec = RandomSceneSpec::default();
    for seed in 0..4 {
        let (scene, cams) = random_scene(seed, &spec);
        let loss = ProbeLoss::new(spec.width * spec.height, spec.classes, seed);
        let report =
            fd_check(&scene, &cams, 0, Some(2), &RenderOptions::default(), &loss, &FdConfig::default()).unwrap();
        for (class, err, n) in report.by_class() {
            println!("seed {seed} {:>14} n={n:2} max rel err {err:.3e}", class.name());
        }
        for s in &report.samples {
            if s.rel_error > 1e-4 {
                println!(
                    "  BAD {:?} analytic {:.6e} numeric {:.6e} excluded {}",
                    s.id, s.analytic, s.numeric, s.excluded_pixels
                );
            }
        }
        let classes: Vec<ParamClass> = report.by_class().into_iter().map(|c| c.0).collect();
        assert_eq!(classes.len(), ParamClass::ALL.len());
        assert!(report.max_rel_error() < 1e-4);
    }
}
