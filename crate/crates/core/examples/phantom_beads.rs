//! Renders a bead phantom, degrades it with the default anisotropic PSF and
//! writes truth, degraded and isotropic-reference stacks as TIFF.
//!
//! `cargo run --release --example phantom_beads -- [out_dir]`

use std::path::PathBuf;

use isocycle::phantom::{degrade, isotropic_reference, make_beads, BeadSpec, DegradationModel};
use isocycle::volume::save_volume;

fn main() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("isocycle-examples/phantom_beads"));

    let spec = BeadSpec::new([96, 96, 96], 0.5, 80, 0.25);
    let truth = make_beads(&spec, 7)?;
    let model = DegradationModel::default();
    let degraded = degrade(&truth, &model)?;
    let reference = isotropic_reference(&truth.volume, model.psf_sigma_um[1], model.truncate)?;

    save_volume(&truth.volume, &out.join("truth.tif"))?;
    save_volume(&degraded, &out.join("degraded.tif"))?;
    save_volume(&reference, &out.join("reference.tif"))?;

    println!("{} beads in a {:?} volume", truth.beads().count(), truth.volume.dims());
    println!("psf sigma (z, y, x) = {:?} um, axial step {} um", model.psf_sigma_um, model.axial_step_um);
    let (lo, hi) = degraded.min_max();
    println!("degraded intensity range [{lo:.4}, {hi:.4}]");
    println!("wrote {}", out.display());
    Ok(())
}
