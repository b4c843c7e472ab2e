//! Bright-spot detection and per-plane FWHM statistics.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::fit::{fit_gaussian_2d, GaussianFit2D};
use crate::error::{Error, Result};
use crate::volume::Volume;

/// Detected (or externally supplied) spot positions, brightest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotSet {
    pub positions: Vec<[usize; 3]>,
    pub intensities: Vec<f32>,
    pub min_separation: f64,
}

impl SpotSet {
    /// Wraps a fixed list of positions, e.g. spots detected on another
    /// volume, so that two volumes can be measured at the same locations.
    pub fn from_positions(v: &Volume, positions: Vec<[usize; 3]>) -> Result<Self> {
        let d = v.dims();
        if let Some(p) = positions.iter().find(|p| (0..3).any(|a| p[a] >= d[a])) {
            return Err(Error::invalid(format!("spot {p:?} lies outside {d:?}")));
        }
        let intensities = positions.iter().map(|p| v.data()[*p]).collect();
        Ok(SpotSet {
            positions,
            intensities,
            min_separation: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Finds 26-neighbourhood local maxima above `threshold`, then keeps the
/// brightest of any group closer than `min_sep` voxels.
///
/// On plateaus only the first voxel in raster order counts as a maximum.
pub fn detect_spots(v: &Volume, threshold: f32, min_sep: f64) -> SpotSet {
    let a = v.data();
    let [nz, ny, nx] = v.dims();
    let mut cands: Vec<([usize; 3], f32)> = Vec::new();
    for ((z, y, x), &c) in a.indexed_iter() {
        if !(c > threshold) {
            continue;
        }
        let mut is_max = true;
        'nb: for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dz == 0 && dy == 0 && dx == 0 {
                        continue;
                    }
                    let (zz, yy, xx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    if zz < 0 || yy < 0 || xx < 0 || zz >= nz as isize || yy >= ny as isize || xx >= nx as isize {
                        continue;
                    }
                    let n = a[[zz as usize, yy as usize, xx as usize]];
                    let earlier = (dz, dy, dx) < (0, 0, 0);
                    if n > c || (earlier && n == c) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
        }
        if is_max {
            cands.push(([z, y, x], c));
        }
    }
    // Brightest first; ties broken by position for determinism.
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let min2 = min_sep * min_sep;
    let mut kept: Vec<([usize; 3], f32)> = Vec::new();
    for (p, c) in cands {
        let close = kept.iter().any(|(q, _)| {
            let d2: f64 = (0..3).map(|i| (p[i] as f64 - q[i] as f64).powi(2)).sum();
            d2 < min2
        });
        if !close {
            kept.push((p, c));
        }
    }
    SpotSet {
        positions: kept.iter().map(|k| k.0).collect(),
        intensities: kept.iter().map(|k| k.1).collect(),
        min_separation: min_sep,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitPlane {
    /// The xy plane through the spot; reports the mean of the y and x widths.
    Lateral,
    /// The xz plane through the spot; reports the z width.
    Axial,
}

impl FitPlane {
    pub fn name(self) -> &'static str {
        match self {
            FitPlane::Lateral => "lateral",
            FitPlane::Axial => "axial",
        }
    }
}

/// Patch side for an expected FWHM in voxels: four widths, odd, within [7, 33].
pub fn patch_side(expected_fwhm_vox: f64) -> usize {
    let s = (4.0 * expected_fwhm_vox).round().clamp(7.0, 33.0) as usize;
    if s % 2 == 0 {
        s + 1
    } else {
        s
    }
    .min(33)
}

/// Extracts the plane patch centred at `p`, truncated at the volume faces.
pub fn plane_patch(v: &Volume, p: [usize; 3], plane: FitPlane, side: usize) -> Array2<f64> {
    let d = v.dims();
    let h = side / 2;
    let range = |c: usize, n: usize| c.saturating_sub(h)..(c + h + 1).min(n);
    let a = v.data();
    let view = match plane {
        FitPlane::Lateral => a.slice(s![p[0], range(p[1], d[1]), range(p[2], d[2])]),
        FitPlane::Axial => a.slice(s![range(p[0], d[0]), p[1], range(p[2], d[2])]),
    };
    view.mapv(|x| x as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotFit {
    pub position: [usize; 3],
    pub fit: GaussianFit2D,
    /// The plane's reported FWHM in µm.
    pub fwhm_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwhmReport {
    pub plane: FitPlane,
    pub fits: Vec<SpotFit>,
    pub failed: Vec<[usize; 3]>,
    pub mean_um: f64,
    pub median_um: f64,
    pub std_um: f64,
}

impl FwhmReport {
    pub fn count(&self) -> usize {
        self.fits.len()
    }
}

/// Fits every spot in the chosen plane and aggregates FWHM statistics in µm.
pub fn fwhm_report(v: &Volume, spots: &SpotSet, plane: FitPlane, patch: usize) -> Result<FwhmReport> {
    if spots.is_empty() {
        return Err(Error::invalid("no spots to measure"));
    }
    let vs = v.voxel_size();
    let mut fits = Vec::new();
    let mut failed = Vec::new();
    for &p in &spots.positions {
        let img = plane_patch(v, p, plane, patch);
        match fit_gaussian_2d(&img.view()) {
            Ok(fit) => {
                let fwhm_um = match plane {
                    FitPlane::Lateral => 0.5 * (fit.fwhm[0] * vs[1] + fit.fwhm[1] * vs[2]),
                    FitPlane::Axial => fit.fwhm[0] * vs[0],
                };
                fits.push(SpotFit { position: p, fit, fwhm_um });
            }
            Err(_) => failed.push(p),
        }
    }
    if fits.is_empty() {
        return Err(Error::numerical(format!(
            "all {} {} fits failed",
            failed.len(),
            plane.name()
        )));
    }
    let mut w: Vec<f64> = fits.iter().map(|f| f.fwhm_um).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    w.sort_by(f64::total_cmp);
    let median = if w.len() % 2 == 1 {
        w[w.len() / 2]
    } else {
        0.5 * (w[w.len() / 2 - 1] + w[w.len() / 2])
    };
    Ok(FwhmReport {
        plane,
        fits,
        failed,
        mean_um: mean,
        median_um: median,
        std_um: std,
    })
}
