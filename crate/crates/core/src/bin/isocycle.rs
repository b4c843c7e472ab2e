use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use isocycle::config::RunConfig;
use isocycle::pipeline;
use isocycle::Error;

#[derive(Parser)]
#[command(name = "isocycle", version, about = "Axial super-resolution of anisotropic volumes")]
struct Cli {
    /// Run configuration (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.iterations=100`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom and its degraded observation.
    Phantom,
    /// Filter, resample and normalize an input volume.
    Preprocess,
    /// Train the model on normalized volumes.
    Train,
    /// Restore a normalized volume with a trained generator.
    Restore,
    /// Measure FWHM, PSNR and spectra of volumes against a reference.
    Evaluate,
    /// Richardson–Lucy deconvolution baseline.
    Rl,
}

const DEVICE_VAR: &str = "ISOCYCLE_DEVICE";

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Ok(dev) = std::env::var(DEVICE_VAR) {
        if !dev.eq_ignore_ascii_case("cpu") {
            return Err(Error::Config(format!("{DEVICE_VAR}={dev}: only `cpu` is available")).into());
        }
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.output_dir {
        cfg.output_dir = d;
    }
    let cwd = std::env::current_dir()?;
    cfg.resolve_paths(&cwd);
    let out = match cli.command {
        Command::Phantom => pipeline::cmd_phantom(&cfg)?,
        Command::Preprocess => pipeline::cmd_preprocess(&cfg)?,
        Command::Train => pipeline::cmd_train(&cfg)?,
        Command::Restore => pipeline::cmd_restore(&cfg)?,
        Command::Evaluate => {
            let (out, report) = pipeline::cmd_evaluate(&cfg)?;
            for v in &report.volumes {
                println!(
                    "{:<12} axial/lateral {:>6}  psnr_xz {:.2} dB  psnr_xy {:.2} dB",
                    v.label,
                    v.anisotropy().map_or("NA".into(), |r| format!("{r:.3}")),
                    v.psnr_axial_db,
                    v.psnr_lateral_db
                );
            }
            out
        }
        Command::Rl => pipeline::cmd_rl(&cfg)?,
    };
    for (k, p) in &out.files {
        println!("{k}: {}", p.display());
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::Io(_)) | Some(Error::Tiff(_)) => 3,
        Some(Error::Numerical(_)) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
