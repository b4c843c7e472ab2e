//! Filament phantom with shot and read noise, shown as maximum intensity
//! projections of the truth and of the degraded stack.
//!
//! `cargo run --release --example phantom_filaments -- [out_dir]`

use std::path::PathBuf;

use isocycle::metrics::{mip, report::plot_image};
use isocycle::phantom::{degrade, make_filaments, DegradationModel, FilamentSpec, Noise};

fn main() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("isocycle-examples/phantom_filaments"));
    std::fs::create_dir_all(&out)?;

    let truth = make_filaments(&FilamentSpec::new([64, 96, 96], 0.5, 6, 0.6), 3)?;
    let model = DegradationModel {
        noise: Noise::PoissonGaussian { scale: 400.0, sigma: 0.005 },
        seed: 11,
        ..Default::default()
    };
    let degraded = degrade(&truth, &model)?;

    // Projections along y show the axial (z, x) plane where the blur is worst.
    for (name, v) in [("truth", &truth.volume), ("degraded", &degraded)] {
        let [nz, ny, _] = v.dims();
        let xy = mip(v, 0, 0, nz)?;
        let xz = mip(v, 1, 0, ny)?;
        plot_image(&out.join(format!("{name}_mip_xy.svg")), &xy.mapv(f64::from), 256)?;
        plot_image(&out.join(format!("{name}_mip_xz.svg")), &xz.mapv(f64::from), 256)?;
    }
    println!("{} filaments; projections in {}", truth.objects.len(), out.display());
    Ok(())
}
