//! The input pipeline on a synthetic light-sheet-like stack: median filter,
//! y–z shear, resampling to isotropic voxels and percentile normalization,
//! then the inverse intensity map.
//!
//! `cargo run --release --example preprocess`

use isocycle::phantom::{degrade, make_beads, BeadSpec, DegradationModel, Noise};
use isocycle::volume::{
    denormalize, median_filter, normalize_percentile, resample_isotropic, shear_yz, Volume,
};

fn main() -> anyhow::Result<()> {
    let truth = make_beads(&BeadSpec::new([48, 64, 64], 0.5, 30, 0.25), 1)?;
    let noisy = degrade(
        &truth,
        &DegradationModel {
            noise: Noise::Poisson { scale: 300.0 },
            ..Default::default()
        },
    )?;
    // Pretend the stack was acquired with 1 µm plane spacing.
    let acquired = Volume::raw(
        noisy.data().slice(ndarray::s![..;2, .., ..]).to_owned(),
        [1.0, 0.5, 0.5],
    )?;

    let filtered = median_filter(&acquired, 2)?;
    let sheared = shear_yz(&filtered, 0.25)?;
    let iso = resample_isotropic(&sheared, 0.5)?;
    let (normalized, record) = normalize_percentile(&iso, 3.0, 97.0)?;

    println!("acquired  {:?} @ {:?} um", acquired.dims(), acquired.voxel_size());
    println!("sheared   {:?}", sheared.dims());
    println!("isotropic {:?} @ {:?} um", iso.dims(), iso.voxel_size());
    let (lo, hi) = normalized.min_max();
    println!("normalized range [{lo}, {hi}], record {record:?}");

    let back = denormalize(&normalized, &record)?;
    let (blo, bhi) = back.min_max();
    println!("denormalized range [{blo:.4}, {bhi:.4}] (saturated tails stay clipped)");
    Ok(())
}
