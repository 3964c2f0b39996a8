use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
  "width": 32, "height": 24, "seeds": [0],
  "camera": {"frames": 4},
  "scene": {"ground": 60, "per_building": 10, "backdrop": 20, "per_object": 10},
  "training": {"iterations": 3},
  "tracking": {"iterations": 20},
  "bench": {"splats": 300, "width": 32, "height": 24, "repeats": 1}
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_holosplat")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn err(args: &[&str]) -> (i32, Value) {
    let out = run(args);
    assert!(!out.status.success());
    let doc: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    (out.status.code().unwrap(), doc)
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.json");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_render_and_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let gen_dir = dir.path().join("gen");
    let doc = ok(&["gen", &cfg, "--out", gen_dir.to_str().unwrap()]);
    assert_eq!(doc["frames"], 4);
    assert_eq!(doc["objects"], 1);
    for f in ["config.json", "scene.json", "cameras.json", "labels.json", "tracks/object_1.json"] {
        assert!(gen_dir.join(f).exists(), "{f}");
    }

    let render_dir = dir.path().join("render");
    let scene = gen_dir.join("scene.json");
    let cams = gen_dir.join("cameras.json");
    let doc = ok(&[
        "render",
        scene.to_str().unwrap(),
        cams.to_str().unwrap(),
        "--out",
        render_dir.to_str().unwrap(),
        "--modalities",
        "rgb,depth,flow",
    ]);
    assert_eq!(doc["frames"], 4);
    assert!(render_dir.join("frame_000_rgb.ppm").exists());
    assert!(render_dir.join("frame_000_flow.hsr").exists());
    assert!(!render_dir.join("frame_003_flow.hsr").exists(), "last frame has no successor");
    assert!(!render_dir.join("frame_000_semantic.hsr").exists());

    let track = gen_dir.join("tracks/object_1.json");
    let fitted = dir.path().join("fitted.json");
    let doc = ok(&[
        "fit-tracks",
        track.to_str().unwrap(),
        "--mode",
        "none",
        "--noise",
        "1",
        "--out",
        fitted.to_str().unwrap(),
    ]);
    assert_eq!(doc["mode"], "none");
    assert_eq!(doc["e_t"], doc["observed_e_t"]);
    assert!(doc["e_t"].as_f64().unwrap() > 0.0);
    assert!(fitted.exists());
}

#[test]
fn fitting_clean_track_keeps_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let gen_dir = dir.path().join("gen");
    ok(&["gen", &cfg, "--out", gen_dir.to_str().unwrap(), "--set", "scene.turn_segments=1"]);
    let track = gen_dir.join("tracks/object_1.json");
    let doc = ok(&["fit-tracks", track.to_str().unwrap(), "--iterations", "50"]);
    assert_eq!(doc["mode"], "unicycle");
    assert!(doc["loss_track"].as_f64().unwrap() < 1e-9);
    assert!(doc["loss_unicycle"].as_f64().unwrap() < 1e-9);
}

#[test]
fn train_writes_experiment_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let ckpt = dir.path().join("ckpt.json");
    let doc = ok(&[
        "train",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--iterations",
        "2",
        "--lr",
        "opacity=0.01",
        "--lambda",
        "lambda_s=0.05",
        "--no-flow",
        "--checkpoint-out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(doc["iterations"], 2);
    assert!(doc["eval"]["psnr"].as_f64().unwrap() > 10.0);
    let echo: Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["training"]["rates"]["opacity"], 0.01);
    assert_eq!(echo["weights"]["lambda_s"], 0.05);
    assert_eq!(echo["toggles"]["flow"], false);
    assert!(out.join("metrics.json").exists());
    assert!(out.join("images/heldout_001.ppm").exists());
    assert!(out.join("tracks/object_1.json").exists());

    let doc = ok(&["train", &cfg, "--iterations", "1", "--checkpoint-in", ckpt.to_str().unwrap()]);
    assert!(doc["eval"]["psnr"].as_f64().is_some());
    assert!(doc.get("files").is_none());
}

#[test]
fn ablate_and_bench_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("ablation");
    let doc = ok(&["ablate", "exposure", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(doc["ablation"], "exposure");
    assert_eq!(doc["variants"].as_array().unwrap().len(), 2);
    assert!(out.join("metrics.json").exists());

    let doc = ok(&["bench", &cfg]);
    assert_eq!(doc["stages"].as_array().unwrap().len(), 5);
    assert!(doc["max_abs_diff"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn failures_emit_error_documents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());

    let (code, doc) = err(&["frobnicate"]);
    assert_eq!(code, 2);
    assert_eq!(doc["error"]["kind"], "usage");

    let (code, doc) = err(&["gen", "/nonexistent/config.json", "--out", "x"]);
    assert_eq!(code, 1);
    assert_eq!(doc["error"]["kind"], "io");

    let (_, doc) = err(&["ablate", "nope", &cfg]);
    assert_eq!(doc["error"]["kind"], "usage");

    let (_, doc) = err(&["bench", &cfg, "--set", "training.no_such_field=1"]);
    assert_eq!(doc["error"]["kind"], "format");

    let (_, doc) = err(&["gen", &cfg, "--set", "camera.frames=1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(doc["error"]["kind"], "invalid");

    let (_, doc) = err(&["gen", &cfg]);
    assert_eq!(doc["error"]["kind"], "usage");
}
