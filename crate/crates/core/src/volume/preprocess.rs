//! Median filtering, percentile normalization, isotropic resampling and
//! Y-Z shear correction.

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use super::{mirror_index, IntensityDomain, Volume};
use crate::error::{Error, Result};

/// Clip points used by [`normalize_percentile`], kept so that results can be
/// mapped back to raw intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub low_clip: f64,
    pub high_clip: f64,
    pub low_pct: f64,
    pub high_pct: f64,
}

/// 2D median filter applied to every lateral (`xy`) slice.
///
/// The window is the square of Chebyshev radius `radius`; edges are
/// handled by half-sample reflection.
pub fn median_filter(v: &Volume, radius: usize) -> Result<Volume> {
    let [nz, ny, nx] = v.dims();
    if radius == 0 {
        return Err(Error::invalid("median radius must be >= 1"));
    }
    if radius >= ny.min(nx) {
        return Err(Error::invalid(format!(
            "median radius {radius} must be smaller than the lateral size {}x{}",
            ny, nx
        )));
    }
    let r = radius as isize;
    let side = 2 * radius + 1;
    let mid = side * side / 2;
    let src = v.data();
    let mut out = Array3::<f32>::zeros((nz, ny, nx));
    let mut window = vec![0f32; side * side];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut k = 0;
                for dy in -r..=r {
                    let yy = mirror_index(y as isize + dy, ny);
                    for dx in -r..=r {
                        let xx = mirror_index(x as isize + dx, nx);
                        window[k] = src[[z, yy, xx]];
                        k += 1;
                    }
                }
                let (_, m, _) = window.select_nth_unstable_by(mid, f32::total_cmp);
                out[[z, y, x]] = *m;
            }
        }
    }
    v.with_data(out, v.domain())
}

/// Linearly interpolated empirical percentile (`p` in percent) of `values`.
///
/// Uses rank `p/100 * (n - 1)`, the same convention as NumPy's default.
/// The slice is reordered in place.
pub fn percentile(values: &mut [f32], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty set"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::invalid(format!("percentile {p} outside [0, 100]")));
    }
    let n = values.len();
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let (_, lo_val, upper) = values.select_nth_unstable_by(lo, f32::total_cmp);
    let lo_val = *lo_val as f64;
    if frac == 0.0 || upper.is_empty() {
        return Ok(lo_val);
    }
    let hi_val = upper
        .iter()
        .copied()
        .min_by(f32::total_cmp)
        .expect("non-empty") as f64;
    Ok(lo_val + (hi_val - lo_val) * frac)
}

/// Percentile-based saturation followed by an affine map onto `[-1, 1]`.
///
/// Percentiles are taken over every voxel of the volume.
pub fn normalize_percentile(
    v: &Volume,
    low_pct: f64,
    high_pct: f64,
) -> Result<(Volume, NormalizationRecord)> {
    if v.domain() != IntensityDomain::Raw {
        return Err(Error::invalid(
            "volume is already normalized; refusing to normalize twice",
        ));
    }
    if !(0.0 <= low_pct && low_pct < high_pct && high_pct <= 100.0) {
        return Err(Error::invalid(format!(
            "percentiles must satisfy 0 <= low < high <= 100, got ({low_pct}, {high_pct})"
        )));
    }
    let mut scratch: Vec<f32> = v.data().iter().copied().collect();
    let low_clip = percentile(&mut scratch, low_pct)?;
    let high_clip = percentile(&mut scratch, high_pct)?;
    if !(low_clip < high_clip) {
        return Err(Error::numerical(format!(
            "degenerate intensity range: percentiles coincide at {low_clip}"
        )));
    }
    let rec = NormalizationRecord {
        low_clip,
        high_clip,
        low_pct,
        high_pct,
    };
    let span = high_clip - low_clip;
    let out = v.data().mapv(|x| {
        let x = x as f64;
        if x <= low_clip {
            -1.0
        } else if x >= high_clip {
            1.0
        } else {
            ((x - low_clip) / span * 2.0 - 1.0).clamp(-1.0, 1.0) as f32
        }
    });
    Ok((v.with_data(out, IntensityDomain::Normalized)?, rec))
}

/// Inverse of the affine part of [`normalize_percentile`].
pub fn denormalize(v: &Volume, rec: &NormalizationRecord) -> Result<Volume> {
    if v.domain() != IntensityDomain::Normalized {
        return Err(Error::invalid("denormalize expects a normalized volume"));
    }
    let (lo, hi) = (rec.low_clip, rec.high_clip);
    let out = v.data().mapv(|x| {
        let t = (x as f64 + 1.0) * 0.5;
        ((1.0 - t) * lo + t * hi) as f32
    });
    v.with_data(out, IntensityDomain::Raw)
}

/// Sampling plan for one axis of a linear resampling: each output sample
/// reads `(i0, i1, w)` and produces `(1 - w) * a[i0] + w * a[i1]`.
#[derive(Debug, Clone)]
pub(crate) struct AxisTaps {
    pub taps: Vec<(usize, usize, f64)>,
}

impl AxisTaps {
    /// Maps fractional source coordinates (clamped to `[0, n-1]`) to taps.
    pub fn from_coords(coords: impl IntoIterator<Item = f64>, n: usize) -> Self {
        let taps = coords
            .into_iter()
            .map(|c| {
                let c = c.clamp(0.0, (n - 1) as f64);
                let i0 = c.floor() as usize;
                let w = c - i0 as f64;
                if w == 0.0 || i0 + 1 >= n {
                    (i0, i0, 0.0)
                } else {
                    (i0, i0 + 1, w)
                }
            })
            .collect();
        AxisTaps { taps }
    }
}

/// Applies 1D linear taps along `axis`.
pub(crate) fn resample_axis(a: &Array3<f32>, axis: usize, taps: &AxisTaps) -> Array3<f32> {
    let mut dims = [a.shape()[0], a.shape()[1], a.shape()[2]];
    dims[axis] = taps.taps.len();
    let mut out = Array3::<f32>::zeros(dims);
    for (i, &(i0, i1, w)) in taps.taps.iter().enumerate() {
        let src0 = a.index_axis(Axis(axis), i0);
        let mut dst = out.index_axis_mut(Axis(axis), i);
        if w == 0.0 {
            dst.assign(&src0);
        } else {
            let src1 = a.index_axis(Axis(axis), i1);
            ndarray::Zip::from(&mut dst)
                .and(&src0)
                .and(&src1)
                .for_each(|d, &p, &q| {
                    *d = ((1.0 - w) * p as f64 + w * q as f64) as f32;
                });
        }
    }
    out
}

/// Resamples onto an isotropic grid of spacing `target_voxel` µm.
///
/// Output dims are `round(extent / target)` (at least one). Voxel centres
/// are mapped onto each other and values come from separable linear
/// interpolation, i.e. trilinear interpolation.
pub fn resample_isotropic(v: &Volume, target_voxel: f64) -> Result<Volume> {
    if !(target_voxel > 0.0) || !target_voxel.is_finite() {
        return Err(Error::invalid(format!(
            "target voxel size must be positive, got {target_voxel}"
        )));
    }
    let extent = v.extent();
    if extent.iter().any(|&e| target_voxel > e) {
        return Err(Error::invalid(format!(
            "target voxel {target_voxel} µm exceeds the volume extent {extent:?}"
        )));
    }
    let mut data = v.data().clone();
    for axis in 0..3 {
        let n_in = v.dims()[axis];
        let vs = v.voxel_size()[axis];
        let n_out = ((extent[axis] / target_voxel).round() as usize).max(1);
        if n_out == n_in && vs == target_voxel {
            continue;
        }
        let scale = target_voxel / vs;
        let taps = AxisTaps::from_coords((0..n_out).map(|i| (i as f64 + 0.5) * scale - 0.5), n_in);
        data = resample_axis(&data, axis, &taps);
    }
    Volume::new(data, [target_voxel; 3], v.domain())
}

/// Shears the `y` axis against `z`: `y' = y + factor * z`.
///
/// The canvas grows along `y` so no data is lost; uncovered voxels are
/// filled with the domain minimum (`-1` for normalized data, `0` for raw).
pub fn shear_yz(v: &Volume, factor: f64) -> Result<Volume> {
    if !factor.is_finite() {
        return Err(Error::invalid("shear factor must be finite"));
    }
    let [nz, ny, nx] = v.dims();
    let span = factor * (nz as f64 - 1.0);
    let grow = span.abs().ceil() as usize;
    let offset = (-span).max(0.0);
    let ny_out = ny + grow;
    let fill = match v.domain() {
        IntensityDomain::Normalized => -1.0f32,
        IntensityDomain::Raw => 0.0f32,
    };
    let src = v.data();
    let mut out = Array3::<f32>::from_elem((nz, ny_out, nx), fill);
    for z in 0..nz {
        let shift = factor * z as f64 + offset;
        for yo in 0..ny_out {
            let sy = yo as f64 - shift;
            if sy < -1e-9 || sy > (ny - 1) as f64 + 1e-9 {
                continue;
            }
            let sy = sy.clamp(0.0, (ny - 1) as f64);
            let y0 = sy.floor() as usize;
            let w = sy - y0 as f64;
            for x in 0..nx {
                let a = src[[z, y0, x]];
                out[[z, yo, x]] = if w == 0.0 || y0 + 1 >= ny {
                    a
                } else {
                    ((1.0 - w) * a as f64 + w * src[[z, y0 + 1, x]] as f64) as f32
                };
            }
        }
    }
    v.with_data(out, v.domain())
}
