//! Tiled inference with a generator checkpoint.
//!
//! `cargo run --release --example restore -- <checkpoint> <normalized.tif> [out.tif]`
//!
//! Without arguments, a freshly initialized generator is applied to a
//! synthetic volume, which shows the tiling and padding path end to end.

use std::path::PathBuf;

use isocycle::nn::{Generator, GeneratorConfig, ModelBundle};
use isocycle::restorer::{restore_volume_with, InferencePlan, TileOrder};
use isocycle::volume::{load_volume, normalize_percentile, save_volume};
use isocycle::phantom::{degrade, make_beads, BeadSpec, DegradationModel};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (g, input, out) = match args.as_slice() {
        [ckpt, input, rest @ ..] => (
            ModelBundle::load_generator(ckpt.as_ref())?,
            load_volume(input.as_ref(), None)?,
            rest.first().map(PathBuf::from),
        ),
        _ => {
            let truth = make_beads(&BeadSpec::new([70, 90, 80], 0.5, 40, 0.25), 5)?;
            let (v, _) = normalize_percentile(&degrade(&truth, &DegradationModel::default())?, 0.03, 99.97)?;
            (Generator::new(GeneratorConfig::unet(4), 5)?, v, None)
        }
    };

    let plan = InferencePlan {
        tile: 48,
        overlap: 16,
        border_crop: 8,
        ..Default::default()
    };
    let grid = plan.grid(input.dims())?;
    println!(
        "input {:?} padded to {:?}: {} tiles of {}³",
        input.dims(),
        grid.volume_dims,
        grid.len(),
        grid.tile
    );
    let restored = restore_volume_with(&g, &input, &plan, TileOrder::Forward, |done, total| {
        if done % 4 == 0 || done == total {
            println!("  tile {done}/{total}");
        }
    })?;
    println!("restored {:?}, domain {:?}", restored.dims(), restored.domain());
    if let Some(path) = out {
        save_volume(&restored, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
