//! Image-quality measurements: PSNR, spot widths, line profiles, spectra
//! and the Richardson–Lucy baseline.

mod fit;
mod fourier;
pub mod report;
mod rl;
mod spots;

use ndarray::{s, Array1, Array2, ArrayBase, Axis, Data, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume;

pub use fit::{
    fit_gaussian_1d, fit_gaussian_2d, fit_gaussian_2d_f32, fwhm_from_sigma, GaussianFit1D, GaussianFit2D,
    FWHM_PER_SIGMA, MAX_ITERATIONS, TOLERANCE,
};
pub use fourier::{dft2, fourier_profile, mean_profile, spectral_distance, FourierProfile};
pub use rl::{rl_deconvolve, rl_deconvolve_traced, RlTrace, DEFAULT_ITERATIONS, EPSILON_FRACTION};
pub use spots::{detect_spots, fwhm_report, patch_side, plane_patch, FitPlane, FwhmReport, SpotFit, SpotSet};

/// `10·log10(N·max(r)² / Σ(r − t)²)`, peak taken from the reference.
///
/// Identical inputs give `f64::INFINITY`.
pub fn psnr<S1, S2, D>(reference: &ArrayBase<S1, D>, test: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f32>,
    S2: Data<Elem = f32>,
    D: Dimension,
{
    if reference.shape() != test.shape() {
        return Err(Error::invalid(format!(
            "PSNR needs equal shapes, got {:?} and {:?}",
            reference.shape(),
            test.shape()
        )));
    }
    if reference.is_empty() {
        return Err(Error::invalid("PSNR of empty images"));
    }
    let peak = reference.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("reference maximum {peak} is not positive")));
    }
    let sse: f64 = reference
        .iter()
        .zip(test.iter())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let n = reference.len() as f64;
    Ok(10.0 * (n * peak * peak / sse).log10())
}

/// Maximum intensity projection over `thickness` slices from `start` along `axis`.
pub fn mip(v: &Volume, axis: usize, start: usize, thickness: usize) -> Result<Array2<f32>> {
    if axis > 2 {
        return Err(Error::invalid(format!("axis {axis} out of range")));
    }
    let n = v.dims()[axis];
    if thickness == 0 || start + thickness > n {
        return Err(Error::invalid(format!(
            "slab {start}+{thickness} does not fit {n} slices"
        )));
    }
    let slab = v.data().slice_axis(Axis(axis), (start..start + thickness).into());
    Ok(slab.fold_axis(Axis(axis), f32::NEG_INFINITY, |&m, &x| m.max(x)))
}

/// Trilinear sample at a continuous voxel coordinate, clamped to the volume.
pub fn sample_trilinear(v: &Volume, p: [f64; 3]) -> f64 {
    let d = v.dims();
    let a = v.data();
    let mut i0 = [0usize; 3];
    let mut f = [0f64; 3];
    for k in 0..3 {
        let c = p[k].clamp(0.0, (d[k] - 1) as f64);
        let lo = (c.floor() as usize).min(d[k].saturating_sub(2));
        i0[k] = lo;
        f[k] = if d[k] == 1 { 0.0 } else { c - lo as f64 };
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let bit = (corner >> (2 - k)) & 1;
            idx[k] = (i0[k] + bit).min(d[k] - 1);
            w *= if bit == 1 { f[k] } else { 1.0 - f[k] };
        }
        if w != 0.0 {
            acc += w * a[idx] as f64;
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineProfile {
    /// Distance along the segment in µm.
    pub positions_um: Vec<f64>,
    pub values: Vec<f64>,
    pub fit: GaussianFit1D,
    pub fwhm_um: f64,
}

/// Samples the segment `p0 → p1` (voxel coordinates) at spacing of at most
/// one voxel, averaging `width` parallel lines spaced one voxel apart.
pub fn sample_line(v: &Volume, p0: [f64; 3], p1: [f64; 3], width: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = v.dims();
    for p in [p0, p1] {
        if (0..3).any(|k| !(p[k] >= 0.0 && p[k] <= (d[k] - 1) as f64)) {
            return Err(Error::invalid(format!("endpoint {p:?} outside volume {d:?}")));
        }
    }
    if width == 0 {
        return Err(Error::invalid("line width must be at least 1"));
    }
    let dir = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
    let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    if len == 0.0 {
        return Err(Error::invalid("degenerate line segment"));
    }
    let n = len.ceil() as usize + 1;
    let u = dir.map(|x| x / len);
    // A unit vector orthogonal to the segment, built against the axis the
    // segment is least aligned with.
    let e = (0..3)
        .min_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()))
        .expect("three axes");
    let mut ev = [0.0; 3];
    ev[e] = 1.0;
    let mut perp = [
        u[1] * ev[2] - u[2] * ev[1],
        u[2] * ev[0] - u[0] * ev[2],
        u[0] * ev[1] - u[1] * ev[0],
    ];
    let pn = perp.iter().map(|x| x * x).sum::<f64>().sqrt();
    perp = perp.map(|x| x / pn);
    let vs = v.voxel_size();
    let step_um = (0..3).map(|k| (dir[k] * vs[k]).powi(2)).sum::<f64>().sqrt() / (n - 1) as f64;
    let mut values = vec![0.0; n];
    for (i, val) in values.iter_mut().enumerate() {
        let t = i as f64 / (n - 1) as f64;
        let base = [p0[0] + t * dir[0], p0[1] + t * dir[1], p0[2] + t * dir[2]];
        let mut acc = 0.0;
        for j in 0..width {
            let o = j as f64 - (width - 1) as f64 / 2.0;
            acc += sample_trilinear(v, [base[0] + o * perp[0], base[1] + o * perp[1], base[2] + o * perp[2]]);
        }
        *val = acc / width as f64;
    }
    let positions = (0..n).map(|i| i as f64 * step_um).collect();
    Ok((positions, values))
}

/// Intensity profile along a segment with a 1D Gaussian fit.
pub fn line_profile(v: &Volume, p0: [f64; 3], p1: [f64; 3], width: usize) -> Result<LineProfile> {
    let (positions_um, values) = sample_line(v, p0, p1, width)?;
    let fit = fit_gaussian_1d(&Array1::from(values.clone()).view())?;
    let step = if positions_um.len() > 1 { positions_um[1] } else { 0.0 };
    Ok(LineProfile {
        positions_um,
        values,
        fwhm_um: fit.fwhm * step,
        fit,
    })
}

/// `n` evenly spaced, non-overlapping slice indices along `axis`, skipping
/// a `margin` at each face.
pub fn roi_slices(len: usize, n: usize, margin: usize) -> Vec<usize> {
    if len <= 2 * margin || n == 0 {
        return Vec::new();
    }
    let usable = len - 2 * margin;
    let n = n.min(usable);
    (0..n).map(|i| margin + (2 * i + 1) * usable / (2 * n)).collect()
}

/// Mean PSNR over 2D slices perpendicular to `axis` at `indices`.
pub fn mean_slice_psnr(truth: &Volume, test: &Volume, axis: usize, indices: &[usize]) -> Result<f64> {
    if truth.dims() != test.dims() {
        return Err(Error::invalid("PSNR volumes differ in shape"));
    }
    if indices.is_empty() {
        return Err(Error::invalid("no slices selected"));
    }
    let mut acc = 0.0;
    for &i in indices {
        let r = truth.data().index_axis(Axis(axis), i);
        let t = test.data().index_axis(Axis(axis), i);
        acc += psnr(&r, &t)?;
    }
    Ok(acc / indices.len() as f64)
}

/// The xz slices of a volume at the given y indices.
pub fn axial_slices(v: &Volume, ys: &[usize]) -> Vec<Array2<f32>> {
    ys.iter().map(|&y| v.data().slice(s![.., y, ..]).to_owned()).collect()
}

/// The xy slices of a volume at the given z indices.
pub fn lateral_slices(v: &Volume, zs: &[usize]) -> Vec<Array2<f32>> {
    zs.iter().map(|&z| v.data().slice(s![z, .., ..]).to_owned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn psnr_closed_form() {
        let r = array![[1.0f32, 0.0], [0.0, 1.0]];
        let t = Array2::<f32>::zeros((2, 2));
        assert!((psnr(&r, &t).unwrap() - 3.010_299_956_639_812).abs() < 1e-9);
        assert_eq!(psnr(&r, &r).unwrap(), f64::INFINITY);
        assert!(psnr(&t, &r).is_err());
        assert!(psnr(&r, &Array2::<f32>::zeros((2, 3))).is_err());
    }

    #[test]
    fn mip_cases() {
        let mut a = Array3::<f32>::zeros((2, 1, 2));
        a[[0, 0, 0]] = 0.0;
        a[[0, 0, 1]] = 2.0;
        a[[1, 0, 0]] = 3.0;
        a[[1, 0, 1]] = 1.0;
        let v = Volume::raw(a, [1.0; 3]).unwrap();
        assert_eq!(mip(&v, 0, 0, 2).unwrap(), array![[3.0f32, 2.0]]);
        assert_eq!(mip(&v, 0, 1, 1).unwrap(), array![[3.0f32, 1.0]]);
        assert!(mip(&v, 0, 1, 2).is_err());
        assert!(mip(&v, 0, 0, 0).is_err());
    }

    #[test]
    fn line_width_one_is_raw_samples() {
        let a = Array3::from_shape_fn((5, 5, 9), |(z, y, x)| (z + 2 * y + 3 * x) as f32);
        let v = Volume::raw(a, [1.0; 3]).unwrap();
        let (pos, vals) = sample_line(&v, [2.0, 2.0, 0.0], [2.0, 2.0, 8.0], 1).unwrap();
        assert_eq!(pos.len(), 9);
        for (i, val) in vals.iter().enumerate() {
            assert_eq!(*val, v.data()[[2, 2, i]] as f64);
        }
        assert!(line_profile(&v.with_data(Array3::from_elem((5, 5, 9), 1.0), v.domain()).unwrap(), [2.0, 2.0, 0.0], [2.0, 2.0, 8.0], 1).is_err());
        assert!(sample_line(&v, [0.0, 0.0, 0.0], [0.0, 0.0, 9.0], 1).is_err());
    }

    #[test]
    fn roi_slices_are_distinct() {
        let s = roi_slices(64, 20, 4);
        assert_eq!(s.len(), 20);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s[0] >= 4 && *s.last().unwrap() < 60);
    }
}
