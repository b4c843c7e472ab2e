//! Slice PSNR against the isotropic reference and the Fourier band-profile
//! comparison between axial and lateral slices.
//!
//! `cargo run --release --example psnr_fourier -- [out_dir]`

use std::path::PathBuf;

use isocycle::metrics::report::plot_lines;
use isocycle::metrics::{axial_slices, lateral_slices, mean_profile, mean_slice_psnr, roi_slices, spectral_distance};
use isocycle::phantom::{degrade, isotropic_reference, make_filaments, DegradationModel, FilamentSpec};
use isocycle::pipeline::match_affine;
use isocycle::volume::IntensityDomain;

fn main() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("isocycle-examples/psnr_fourier"));
    std::fs::create_dir_all(&out)?;

    let truth = make_filaments(&FilamentSpec::new([64; 3], 0.5, 10, 0.5), 9)?;
    let model = DegradationModel::default();
    let degraded = degrade(&truth, &model)?;
    let reference = isotropic_reference(&truth.volume, 1.0, model.truncate)?;
    let matched = degraded.with_data(match_affine(&degraded, &reference)?, IntensityDomain::Raw)?;

    let rois = roi_slices(64, 20, 8);
    let axial = mean_slice_psnr(&reference, &matched, 1, &rois)?;
    let lateral = mean_slice_psnr(&reference, &matched, 0, &rois)?;
    println!("degraded vs reference: xz {axial:.2} dB, xy {lateral:.2} dB over {} slices", rois.len());

    let ref_xy = mean_profile(&lateral_slices(&reference, &rois))?;
    let ref_xz = mean_profile(&axial_slices(&reference, &rois))?;
    let deg_xz = mean_profile(&axial_slices(&degraded, &rois))?;
    println!(
        "band-profile distance to reference xy: reference xz {:.4}, degraded xz {:.4}",
        spectral_distance(&ref_xz, &ref_xy)?,
        spectral_distance(&deg_xz, &ref_xy)?
    );

    let series = |p: &isocycle::metrics::FourierProfile| -> Vec<(f64, f64)> {
        p.rows.iter().enumerate().map(|(k, &v)| (k as f64, v)).collect()
    };
    plot_lines(
        &out.join("band_profiles.svg"),
        "row-band log magnitude",
        "band",
        &[("reference xy", series(&ref_xy)), ("reference xz", series(&ref_xz)), ("degraded xz", series(&deg_xz))],
    )?;
    println!("plot in {}", out.display());
    Ok(())
}
