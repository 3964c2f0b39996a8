//! On-disk layout of an experiment directory.
//!
//! ```text
//! DIR/config.json      the configuration as run
//! DIR/metrics.json     the metrics document
//! DIR/images/NAME.ppm  8-bit previews
//! DIR/images/NAME.hsr  float rasters
//! DIR/tracks/NAME.json object tracks
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::ablation::Artifacts;
use super::config::ExperimentConfig;
use crate::error::Result;
use crate::raster::{write_ppm, write_raster};
use crate::scene::io::save_track;

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes the config echo, metrics, images, and tracks under `dir` and
/// returns the paths written.
pub fn write_experiment(
    dir: &Path,
    cfg: &ExperimentConfig,
    metrics: &impl Serialize,
    artifacts: &Artifacts,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let p = dir.join("config.json");
    write_json(&p, cfg)?;
    written.push(p);
    let p = dir.join("metrics.json");
    write_json(&p, metrics)?;
    written.push(p);
    if !artifacts.images.is_empty() {
        fs::create_dir_all(dir.join("images"))?;
    }
    for (name, img) in &artifacts.images {
        let base = dir.join("images").join(name);
        if img.channels == 3 {
            let p = base.with_extension("ppm");
            write_ppm(&p, img)?;
            written.push(p);
        }
        let p = base.with_extension("hsr");
        write_raster(&p, img)?;
        written.push(p);
    }
    if !artifacts.tracks.is_empty() {
        fs::create_dir_all(dir.join("tracks"))?;
    }
    for (name, track) in &artifacts.tracks {
        let p = dir.join("tracks").join(name).with_extension("json");
        save_track(track, &p)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{read_raster, Image};
    use crate::scene::io::load_track;
    use crate::scene::{PlanarState, UnicycleTrack, Velocity};

    #[test]
    fn experiment_directory_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(3, 2, 3, 0.25);
        let track = UnicycleTrack::from_controls(
            PlanarState::new(0.0, 0.0, 0.0),
            vec![0.5; 3],
            vec![0.0, 1.0, 2.0],
            vec![Velocity::new(1.0, 0.1); 2],
        )
        .unwrap();
        let art = Artifacts { images: vec![("view".into(), img.clone())], tracks: vec![("car".into(), track.clone())] };
        let cfg = ExperimentConfig::default();
        let files = write_experiment(dir.path(), &cfg, &serde_json::json!({"psnr": 30.0}), &art).unwrap();
        assert_eq!(files.len(), 5);
        let echo = ExperimentConfig::load(&dir.path().join("config.json")).unwrap();
        assert_eq!(echo, cfg);
        assert_eq!(read_raster(&dir.path().join("images/view.hsr")).unwrap(), img);
        assert_eq!(load_track(dir.path().join("tracks/car.json")).unwrap(), track);
    }
}
