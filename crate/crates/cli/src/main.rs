//! Command-line front end. Every command prints a JSON document on stdout;
//! failures print `{"error": {"kind", "message"}}` on stderr and exit nonzero.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use holosplat_core::compositor::Modalities;
use holosplat_core::harness::ablation::{run_ablation, AblationName, Artifacts};
use holosplat_core::harness::bench::run_bench;
use holosplat_core::harness::config::{ExperimentConfig, SemanticPath};
use holosplat_core::harness::output::{write_experiment, write_json};
use holosplat_core::harness::pseudo_gt::gen_pseudo_gt;
use holosplat_core::harness::scene_gen::gen_scene;
use holosplat_core::harness::train::{evaluate, init_state, render_views, train};
use holosplat_core::harness::GUARD_BAND;
use holosplat_core::projection::ProjectionConfig;
use holosplat_core::raster::{write_ppm, write_raster, Image};
use holosplat_core::render::{render_frame, RenderOptions};
use holosplat_core::scene::io::{load_cameras, load_scene, load_track, save_cameras, save_scene, save_track};
use holosplat_core::unicycle::{
    fit_track, loss_track, loss_unicycle, pose_errors, track_poses, BoxNoise, FitConfig, FitMode, NoisyBoxTrack, Solver,
};
use holosplat_core::{Error, Result};

#[derive(Parser)]
#[command(name = "holosplat", version, about = "Multi-modal Gaussian splatting with unicycle track rectification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render every camera of a rig and write the requested buffers.
    Render(RenderArgs),
    /// Train on a generated scene and evaluate on held-out frames.
    Train(TrainArgs),
    /// Rectify a noisy object track.
    FitTracks(FitArgs),
    /// Run one ablation over the configured seeds.
    Ablate(AblateArgs),
    /// Time the render stages and compare against the brute-force compositor.
    Bench(ConfigArgs),
    /// Generate a scene, its cameras, and its ground-truth tracks.
    Gen(ConfigArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Modality {
    Rgb,
    Sem,
    Depth,
    Flow,
}

#[derive(Args)]
struct RenderArgs {
    /// Scene file.
    scene: PathBuf,
    /// Camera rig file.
    cameras: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Buffers to render.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "rgb,sem,depth,flow")]
    modalities: Vec<Modality>,
    /// Apply each camera's exposure affine to the color output.
    #[arg(long)]
    exposure: bool,
    /// Cull splats whose projected center lies farther outside the image than
    /// this fraction of its size.
    #[arg(long, default_value_t = GUARD_BAND)]
    guard_band: f64,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config field, e.g. `--set training.iterations=50`.
    #[arg(long = "set", value_name = "PATH=JSON")]
    sets: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-class learning rate, e.g. `--lr opacity=0.01`.
    #[arg(long = "lr", value_name = "CLASS=VALUE")]
    rates: Vec<String>,
    /// Loss weight, e.g. `--lambda lambda_s=0.05`.
    #[arg(long = "lambda", value_name = "NAME=VALUE")]
    weights: Vec<String>,
    /// Disable the semantic loss.
    #[arg(long)]
    no_semantic: bool,
    /// Disable the flow loss.
    #[arg(long)]
    no_flow: bool,
    /// Disable the exposure affine.
    #[arg(long)]
    no_affine: bool,
    /// Semantic normalization path.
    #[arg(long, value_enum)]
    semantic_path: Option<PathArg>,
    /// Start from this scene instead of the perturbed ground truth.
    #[arg(long)]
    checkpoint_in: Option<PathBuf>,
    /// Write the trained scene here.
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PathArg {
    #[value(name = "3d")]
    ThreeD,
    #[value(name = "2d")]
    TwoD,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    None,
    PerFrame,
    Unicycle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Gd,
    Gn,
}

#[derive(Args)]
struct FitArgs {
    /// Track file, or a box-track document with `timestamps`, `boxes`, and
    /// `valid`.
    track: PathBuf,
    #[arg(long, value_enum, default_value = "unicycle")]
    mode: ModeArg,
    /// Corrupt the input with box noise of this level first (1.0 = 0.5 m,
    /// 5 degrees mean error); errors are then reported against the input.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "gd")]
    solver: SolverArg,
    #[arg(long, default_value_t = 3000)]
    iterations: usize,
    /// Write the fitted track here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// dynamic_noise, static_losses, softmax3d, or exposure.
    name: String,
    #[command(flatten)]
    common: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", &e.to_string(), 2),
    };
    let result = match cli.command {
        Command::Render(a) => render(a),
        Command::Train(a) => train_cmd(a),
        Command::FitTracks(a) => fit_tracks(a),
        Command::Ablate(a) => ablate(a),
        Command::Bench(a) => bench(a),
        Command::Gen(a) => generate(a),
    };
    match result {
        Ok(doc) => {
            let text = serde_json::to_string_pretty(&doc).expect("JSON values serialize");
            // A closed pipe (`| head`) is not a failure of the command.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string(), 1),
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let doc = json!({ "error": { "kind": kind, "message": message.trim_end() } });
    eprintln!("{doc}");
    ExitCode::from(code)
}

/// Sets the field at dotted `path` of a JSON object, creating missing
/// sections on the way. Unknown fields are rejected later by the config
/// parser.
fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Usage("empty override path".into()))?;
    for key in keys {
        let obj = node.as_object_mut().ok_or_else(|| Error::Usage(format!("{path}: {key} is not inside an object")))?;
        node = obj.entry(key.to_string()).or_insert_with(|| json!({}));
    }
    let obj = node.as_object_mut().ok_or_else(|| Error::Usage(format!("{path}: parent is not an object")))?;
    obj.insert(last.to_string(), value);
    Ok(())
}

fn split_assignment(s: &str) -> Result<(&str, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Usage(format!("expected KEY=VALUE, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k, value))
}

fn load_config(args: &ConfigArgs, extra: &[(String, Value)]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&args.config)?;
    let mut doc: Value = serde_json::from_str(&text)?;
    if !doc.is_object() {
        return Err(Error::Usage("config must be a JSON object".into()));
    }
    for s in &args.sets {
        let (k, v) = split_assignment(s)?;
        set_path(&mut doc, k, v)?;
    }
    for (k, v) in extra {
        set_path(&mut doc, k, v.clone())?;
    }
    let mut cfg = ExperimentConfig::from_json(&doc.to_string())?;
    if args.out.is_some() {
        cfg.output = args.out.clone();
    }
    Ok(cfg)
}

fn render(a: RenderArgs) -> Result<Value> {
    let scene = load_scene(&a.scene)?;
    let cams = load_cameras(&a.cameras)?;
    let has = |m| a.modalities.contains(&m);
    let modalities = Modalities {
        rgb: has(Modality::Rgb),
        semantic: has(Modality::Sem),
        semantic_2d: false,
        depth: has(Modality::Depth),
        flow: has(Modality::Flow),
    };
    let opts = RenderOptions {
        modalities,
        exposure: a.exposure,
        projection: ProjectionConfig { guard_band: a.guard_band, ..ProjectionConfig::default() },
        ..RenderOptions::default()
    };
    fs::create_dir_all(&a.out)?;
    let mut files = Vec::new();
    let mut put = |name: String, img: Image, preview: bool| -> Result<()> {
        let base = a.out.join(name);
        if preview {
            let p = base.with_extension("ppm");
            write_ppm(&p, &img)?;
            files.push(p);
        }
        let p = base.with_extension("hsr");
        write_raster(&p, &img)?;
        files.push(p);
        Ok(())
    };
    for (i, cam) in cams.iter().enumerate() {
        let next = cams.get(i + 1).filter(|_| modalities.flow);
        let out = render_frame(&scene, cam, next, &opts)?;
        let b = out.buffers;
        let (w, h) = (b.width, b.height);
        if modalities.rgb {
            let color = if a.exposure { b.color_exposed } else { b.color };
            put(format!("frame_{i:03}_rgb"), Image::new(w, h, 3, color)?, true)?;
        }
        if modalities.semantic {
            put(format!("frame_{i:03}_semantic"), Image::new(w, h, b.class_count, b.semantic)?, false)?;
        }
        if modalities.depth {
            put(format!("frame_{i:03}_depth"), Image::new(w, h, 1, b.depth)?, false)?;
        }
        if modalities.flow && next.is_some() {
            put(format!("frame_{i:03}_flow"), Image::new(w, h, 2, b.flow)?, false)?;
        }
        put(format!("frame_{i:03}_alpha"), Image::new(w, h, 1, b.accum_alpha)?, false)?;
    }
    Ok(json!({ "frames": cams.len(), "files": files }))
}

fn train_cmd(a: TrainArgs) -> Result<Value> {
    let mut extra: Vec<(String, Value)> = Vec::new();
    if let Some(n) = a.iterations {
        extra.push(("training.iterations".into(), json!(n)));
    }
    if let Some(s) = a.seed {
        extra.push(("seed".into(), json!(s)));
    }
    for r in &a.rates {
        let (k, v) = split_assignment(r)?;
        extra.push((format!("training.rates.{k}"), v));
    }
    for w in &a.weights {
        let (k, v) = split_assignment(w)?;
        extra.push((format!("weights.{k}"), v));
    }
    for (flag, key) in [(a.no_semantic, "semantic"), (a.no_flow, "flow"), (a.no_affine, "affine")] {
        if flag {
            extra.push((format!("toggles.{key}"), json!(false)));
        }
    }
    if let Some(p) = a.semantic_path {
        let path = if p == PathArg::ThreeD { SemanticPath::ThreeD } else { SemanticPath::TwoD };
        extra.push(("toggles.semantic_path".into(), serde_json::to_value(path)?));
    }
    let cfg = load_config(&a.common, &extra)?;
    let gen = gen_scene(&cfg)?;
    let pgt = gen_pseudo_gt(&gen, &cfg)?;
    let mut state = init_state(&gen, &pgt, &cfg)?;
    if let Some(p) = &a.checkpoint_in {
        let scene = load_scene(p)?;
        if scene.class_count != state.scene.class_count || scene.objects.len() != state.scene.objects.len() {
            return Err(Error::Invalid("checkpoint does not match the configured scene".into()));
        }
        state.scene = scene;
    }
    let log = train(&mut state, &pgt, &cfg)?;
    let eval = evaluate(&state, &pgt, &cfg)?;
    if let Some(p) = &a.checkpoint_out {
        save_scene(&state.scene, p)?;
    }
    let metrics = json!({
        "seed": cfg.seed,
        "iterations": cfg.training.iterations,
        "final_loss": log.losses.last(),
        "eval": eval,
    });
    let mut doc = metrics.clone();
    if let Some(dir) = &cfg.output {
        let views = render_views(&state, &cfg, &eval.frames)?;
        let art = Artifacts {
            images: eval.frames.iter().zip(views).map(|(f, img)| (format!("heldout_{f:03}"), img)).collect(),
            tracks: state.scene.objects.iter().map(|o| (format!("object_{}", o.id), o.track.clone())).collect(),
        };
        let mut files = write_experiment(dir, &cfg, &metrics, &art)?;
        let p = dir.join("scene.json");
        save_scene(&state.scene, &p)?;
        files.push(p);
        doc["files"] = json!(files);
    }
    Ok(doc)
}

fn read_observations(path: &Path) -> Result<(NoisyBoxTrack, bool)> {
    let doc: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    if doc.get("boxes").is_some() {
        let obs: NoisyBoxTrack = serde_json::from_value(doc)?;
        obs.validate()?;
        Ok((obs, false))
    } else {
        Ok((NoisyBoxTrack::from_track(&load_track(path)?), true))
    }
}

fn fit_tracks(a: FitArgs) -> Result<Value> {
    if !a.noise.is_finite() || a.noise < 0.0 {
        return Err(Error::Usage("--noise must be a non-negative number".into()));
    }
    let (clean, from_track) = read_observations(&a.track)?;
    let obs = if a.noise > 0.0 {
        if !from_track {
            return Err(Error::Usage("--noise needs a track file as input".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        BoxNoise { level: a.noise }.corrupt(&clean.to_track()?, &mut rng)
    } else {
        clean.clone()
    };
    let mode = match a.mode {
        ModeArg::None => FitMode::None,
        ModeArg::PerFrame => FitMode::PerFrame,
        ModeArg::Unicycle => FitMode::Unicycle,
    };
    let solver = if a.solver == SolverArg::Gn { Solver::GaussNewton } else { Solver::GradientDescent };
    let cfg = FitConfig { mode, solver, iterations: a.iterations, ..FitConfig::default() };
    let fitted = fit_track(&obs, &cfg)?;
    let mut doc = json!({
        "mode": mode.name(),
        "frames": fitted.len(),
        "loss_track": loss_track(&fitted, &obs)?,
        "loss_unicycle": loss_unicycle(&fitted),
    });
    if a.noise > 0.0 {
        let ts: Vec<f64> = clean.timestamps.clone();
        let pred = track_poses(&fitted, mode, &ts)?;
        let raw = track_poses(&obs.to_track()?, FitMode::None, &ts)?;
        let gt = &clean.boxes;
        let e = pose_errors(&pred, gt)?;
        let e0 = pose_errors(&raw, gt)?;
        doc["e_r"] = json!(e.mean_rotation);
        doc["e_t"] = json!(e.mean_translation);
        doc["observed_e_r"] = json!(e0.mean_rotation);
        doc["observed_e_t"] = json!(e0.mean_translation);
    }
    if let Some(p) = &a.out {
        save_track(&fitted, p)?;
        doc["file"] = json!(p);
    }
    Ok(doc)
}

fn ablate(a: AblateArgs) -> Result<Value> {
    let name = AblationName::parse(&a.name)?;
    let cfg = load_config(&a.common, &[])?;
    let (rep, art) = run_ablation(name, &cfg)?;
    let mut doc = serde_json::to_value(&rep)?;
    if let Some(dir) = &cfg.output {
        doc["files"] = json!(write_experiment(dir, &cfg, &rep, &art)?);
    }
    Ok(doc)
}

fn bench(a: ConfigArgs) -> Result<Value> {
    let cfg = load_config(&a, &[])?;
    let rep = run_bench(&cfg)?;
    let mut doc = serde_json::to_value(&rep)?;
    if let Some(dir) = &cfg.output {
        doc["files"] = json!(write_experiment(dir, &cfg, &rep, &Artifacts::default())?);
    }
    Ok(doc)
}

fn generate(a: ConfigArgs) -> Result<Value> {
    let cfg = load_config(&a, &[])?;
    let dir = cfg.output.clone().ok_or_else(|| Error::Usage("gen needs --out or an output directory".into()))?;
    let gen = gen_scene(&cfg)?;
    fs::create_dir_all(dir.join("tracks"))?;
    let mut files = Vec::new();
    let p = dir.join("config.json");
    write_json(&p, &cfg)?;
    files.push(p);
    let p = dir.join("scene.json");
    save_scene(&gen.scene, &p)?;
    files.push(p);
    let p = dir.join("cameras.json");
    save_cameras(&gen.cameras, &p)?;
    files.push(p);
    let p = dir.join("labels.json");
    write_json(&p, &gen.labels)?;
    files.push(p);
    for o in &gen.scene.objects {
        let p = dir.join("tracks").join(format!("object_{}.json", o.id));
        save_track(&o.track, &p)?;
        files.push(p);
    }
    Ok(json!({
        "static_gaussians": gen.scene.static_gaussians.len(),
        "objects": gen.scene.objects.len(),
        "frames": gen.cameras.len(),
        "files": files,
    }))
}
