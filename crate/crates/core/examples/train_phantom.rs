//! Trains the cycle model on a small degraded bead phantom and saves the
//! final checkpoint, the loss log and the restored volume.
//!
//! `cargo run --release --example train_phantom -- [out_dir] [iterations]`
//!
//! A few hundred iterations already change the axial profile visibly; the
//! defaults take a couple of minutes on one core.

use std::path::PathBuf;

use isocycle::nn::{BundleConfig, DiscriminatorConfig, GeneratorConfig};
use isocycle::phantom::{degrade, make_beads, BeadSpec, DegradationModel};
use isocycle::trainer::{train, TrainConfig, TrainOutput, TrainState, FINAL_CHECKPOINT, LOSS_LOG};
use isocycle::volume::{normalize_percentile, save_volume};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("isocycle-examples/train_phantom"));
    let iterations: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);

    let mut spec = BeadSpec::new([64; 3], 0.5, 60, 0.25);
    spec.min_separation_um = Some(5.0);
    spec.margin_um = Some(2.0);
    let truth = make_beads(&spec, 0)?;
    let degraded = degrade(&truth, &DegradationModel::default())?;
    let (y, _) = normalize_percentile(&degraded, 0.03, 99.97)?;

    let config = TrainConfig {
        crop: 32,
        iterations,
        lr: 5e-4,
        checkpoint_every: 0,
        model: BundleConfig {
            g: GeneratorConfig::unet(8),
            f: GeneratorConfig::dlg(8),
            d: DiscriminatorConfig::with_channels(vec![8, 16, 32, 64]),
        },
        ..Default::default()
    };
    let state = TrainState::new(config)?;
    for (name, n) in state.bundle.parameter_counts() {
        println!("{name:<7} {n:>8} parameters");
    }
    let state = train(
        &[y.clone()],
        state,
        &TrainOutput {
            dir: Some(out.clone()),
            report_every: 50,
        },
    )?;

    let last = state.loss_log.last().expect("at least one iteration");
    println!("final losses {}", last.to_row());
    let restored = state.bundle.g.apply(&y)?;
    save_volume(&y, &out.join("input.tif"))?;
    save_volume(&restored, &out.join("restored.tif"))?;
    println!("checkpoint {}", out.join(FINAL_CHECKPOINT).display());
    println!("loss log   {}", out.join(LOSS_LOG).display());
    Ok(())
}
