//! Detects beads on the isotropic reference and fits 2D Gaussians in the
//! lateral and axial planes of both the reference and the degraded stack.
//!
//! `cargo run --release --example fwhm_beads`

use isocycle::metrics::{detect_spots, fwhm_report, patch_side, FitPlane, SpotSet};
use isocycle::phantom::{degrade, isotropic_reference, make_beads, BeadSpec, DegradationModel};

fn main() -> anyhow::Result<()> {
    let mut spec = BeadSpec::new([80; 3], 0.5, 50, 0.25);
    spec.min_separation_um = Some(5.0);
    let truth = make_beads(&spec, 2)?;
    let model = DegradationModel::default();
    let degraded = degrade(&truth, &model)?;
    let reference = isotropic_reference(&truth.volume, 1.0, model.truncate)?;

    let (_, max) = reference.min_max();
    let spots = detect_spots(&reference, 0.2 * max, 4.0);
    println!("{} spots above 20% of the maximum", spots.len());
    let patch = patch_side(5.0);

    println!("{:<10} {:>8} {:>12} {:>12}", "volume", "plane", "mean_um", "median_um");
    for (name, v) in [("reference", &reference), ("degraded", &degraded)] {
        let here = SpotSet::from_positions(v, spots.positions.clone())?;
        for plane in [FitPlane::Lateral, FitPlane::Axial] {
            let r = fwhm_report(v, &here, plane, patch)?;
            println!(
                "{name:<10} {:>8} {:>12.3} {:>12.3}   ({} fitted, {} failed)",
                plane.name(),
                r.mean_um,
                r.median_um,
                r.count(),
                r.failed.len()
            );
        }
    }
    // A Gaussian of σ µm has FWHM 2.3548·σ; the blur adds in quadrature with
    // the bead's own extent, so the measured values sit slightly above.
    println!("expected: lateral ~{:.2} um, degraded axial ~{:.2} um", 2.3548, 2.3548 * 2.0);
    Ok(())
}
