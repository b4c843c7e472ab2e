//! Drives the command pipeline from a TOML configuration, the same way the
//! `isocycle` binary does: phantom, preprocess, train, restore, evaluate.
//!
//! `cargo run --release --example pipeline_config -- [config.toml] [scale]`
//!
//! With no config file the bead study preset is used; `scale` picks `desk`
//! (default), `smoke` or `full`. The training run is shortened to 50
//! iterations unless a config file is given.

use std::path::{Path, PathBuf};

use isocycle::config::RunConfig;
use isocycle::study::{run_study, study_checks, study_config, StudyScale};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = std::env::temp_dir().join("isocycle-examples/pipeline_config");
    let cfg = match args.first().map(String::as_str) {
        Some(p) if p.ends_with(".toml") => RunConfig::load(Path::new(p))?,
        other => {
            let scale: StudyScale = other.unwrap_or("desk").parse()?;
            let mut cfg = study_config(scale, &out, 0);
            cfg.train.config.iterations = 50;
            cfg.train.report_every = 10;
            cfg
        }
    };
    println!("config hash {}", cfg.hash()?);
    let result = run_study(&cfg)?;
    for v in &result.report.volumes {
        println!(
            "{:<9} axial/lateral {:>6}  psnr xz {:.2} dB  xy {:.2} dB  spectral {:.4}",
            v.label,
            v.anisotropy().map_or("NA".into(), |r| format!("{r:.3}")),
            v.psnr_axial_db,
            v.psnr_lateral_db,
            v.spectral_distance
        );
    }
    for c in study_checks(&result)? {
        println!("{c}");
    }
    println!("loss log sha256 {}", result.loss_log_sha);
    println!("restored sha256 {}", result.restored_sha);
    let dir: PathBuf = result.dir;
    println!("artifacts under {}", dir.display());
    Ok(())
}
