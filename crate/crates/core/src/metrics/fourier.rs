use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Centred log-magnitude spectrum `ln(|F| + MAG_FLOOR)` and its per-axis band means.
///
/// Scaling an image by `s` shifts every entry by `ln s`, so the spectral
/// distance between two images expressed in the same units does not depend
/// on what those units are.
///
/// Band `k` along an axis collects every coefficient whose frequency index
/// on that axis has absolute value `k`, so there are `n/2 + 1` bands.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierProfile {
    pub log_magnitude: Array2<f64>,
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
}

pub const MAG_FLOOR: f64 = 1e-12;

/// Unshifted 2D DFT of a real image.
pub fn dft2(img: &Array2<f32>) -> Array2<Complex64> {
    let (h, w) = img.dim();
    let mut a = img.mapv(|v| Complex64::new(v as f64, 0.0));
    let mut planner = FftPlanner::<f64>::new();
    for (axis, n) in [(1, w), (0, h)] {
        let fft = planner.plan_fft_forward(n);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for mut lane in a.lanes_mut(Axis(axis)) {
            for (b, v) in buf.iter_mut().zip(lane.iter()) {
                *b = *v;
            }
            fft.process(&mut buf);
            for (v, b) in lane.iter_mut().zip(&buf) {
                *v = *b;
            }
        }
    }
    a
}

fn band(k: usize, n: usize) -> usize {
    k.min(n - k)
}

pub fn fourier_profile(img: &Array2<f32>) -> FourierProfile {
    let (h, w) = img.dim();
    let f = dft2(img);
    let mag = f.mapv(|c| (c.norm() + MAG_FLOOR).ln());
    let mut rows = vec![0.0; h / 2 + 1];
    let mut rc = vec![0usize; h / 2 + 1];
    let mut cols = vec![0.0; w / 2 + 1];
    let mut cc = vec![0usize; w / 2 + 1];
    for ((ky, kx), &m) in mag.indexed_iter() {
        let (by, bx) = (band(ky, h), band(kx, w));
        rows[by] += m;
        rc[by] += 1;
        cols[bx] += m;
        cc[bx] += 1;
    }
    for (r, c) in rows.iter_mut().zip(rc) {
        *r /= c as f64;
    }
    for (r, c) in cols.iter_mut().zip(cc) {
        *r /= c as f64;
    }
    let centred = Array2::from_shape_fn((h, w), |(y, x)| mag[[(y + h - h / 2) % h, (x + w - w / 2) % w]]);
    FourierProfile {
        log_magnitude: centred,
        rows,
        cols,
    }
}

/// Element-wise mean of several same-shaped profiles.
pub fn mean_profile(images: &[Array2<f32>]) -> Result<FourierProfile> {
    let first = images.first().ok_or_else(|| Error::invalid("no images"))?;
    let mut acc = fourier_profile(first);
    for img in &images[1..] {
        if img.dim() != first.dim() {
            return Err(Error::invalid("images differ in shape"));
        }
        let p = fourier_profile(img);
        acc.log_magnitude += &p.log_magnitude;
        acc.rows.iter_mut().zip(&p.rows).for_each(|(a, b)| *a += b);
        acc.cols.iter_mut().zip(&p.cols).for_each(|(a, b)| *a += b);
    }
    let n = images.len() as f64;
    acc.log_magnitude /= n;
    acc.rows.iter_mut().for_each(|a| *a /= n);
    acc.cols.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Mean absolute difference between the concatenated band profiles.
pub fn spectral_distance(a: &FourierProfile, b: &FourierProfile) -> Result<f64> {
    if a.rows.len() != b.rows.len() || a.cols.len() != b.cols.len() {
        return Err(Error::invalid("band profiles differ in length"));
    }
    let diffs: Vec<f64> = a
        .rows
        .iter()
        .zip(&b.rows)
        .chain(a.cols.iter().zip(&b.cols))
        .map(|(x, y)| (x - y).abs())
        .collect();
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}
