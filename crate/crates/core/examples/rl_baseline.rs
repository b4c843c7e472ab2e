//! Richardson–Lucy deconvolution as a classical baseline, with the axial
//! and lateral FWHM after each block of iterations.
//!
//! `cargo run --release --example rl_baseline -- [iterations]`

use isocycle::metrics::{detect_spots, fwhm_report, patch_side, rl_deconvolve_traced, FitPlane, SpotSet};
use isocycle::phantom::{axial_excess_psf, degrade, gaussian_psf, isotropic_reference, make_beads, BeadSpec, DegradationModel};
use isocycle::volume::Volume;

fn fwhm(v: &Volume, spots: &SpotSet) -> anyhow::Result<(f64, f64)> {
    let here = SpotSet::from_positions(v, spots.positions.clone())?;
    let p = patch_side(5.0);
    Ok((
        fwhm_report(v, &here, FitPlane::Axial, p)?.mean_um,
        fwhm_report(v, &here, FitPlane::Lateral, p)?.mean_um,
    ))
}

fn main() -> anyhow::Result<()> {
    let iterations: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let mut spec = BeadSpec::new([48, 64, 64], 0.5, 30, 0.25);
    spec.min_separation_um = Some(5.0);
    spec.margin_um = Some(2.0);
    let truth = make_beads(&spec, 4)?;
    let model = DegradationModel::default();
    let degraded = degrade(&truth, &model)?;
    let reference = isotropic_reference(&truth.volume, 1.0, model.truncate)?;
    let (_, max) = reference.min_max();
    let spots = detect_spots(&reference, 0.2 * max, 4.0);

    let (a, l) = fwhm(&degraded, &spots)?;
    println!("degraded            axial {a:.3} um  lateral {l:.3} um");
    let vs = degraded.voxel_size();
    for (name, psf) in [
        ("full PSF", gaussian_psf(model.psf_sigma_um, vs, 3.0)?),
        ("axial-excess PSF", axial_excess_psf(model.psf_sigma_um, vs, 3.0)?),
    ] {
        let trace = rl_deconvolve_traced(&degraded, &psf, iterations)?;
        let (ra, rl) = fwhm(&trace.volume, &spots)?;
        println!("RL {name:<16} axial {ra:.3} um  lateral {rl:.3} um  ({iterations} iterations)");
        let ll = &trace.log_likelihood;
        println!("   log-likelihood {:.4e} -> {:.4e}", ll[0], ll[ll.len() - 1]);
    }
    Ok(())
}
