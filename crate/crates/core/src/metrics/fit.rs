//! Damped least-squares (Levenberg–Marquardt) Gaussian fitting.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `FWHM / σ` for a Gaussian profile.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

pub fn fwhm_from_sigma(sigma: f64) -> f64 {
    // 2 * sqrt(2 ln 2) evaluated at runtime; matches FWHM_PER_SIGMA.
    2.0 * (2.0 * std::f64::consts::LN_2).sqrt() * sigma
}

pub const MAX_ITERATIONS: usize = 200;
pub const TOLERANCE: f64 = 1e-8;

/// Result of fitting `A·exp(-(y-cy)²/2σy² - (x-cx)²/2σx²) + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit2D {
    pub amplitude: f64,
    /// Sub-pixel `(y, x)` centre in patch coordinates.
    pub center: [f64; 2],
    /// `(σy, σx)` in pixels.
    pub sigma: [f64; 2],
    pub offset: f64,
    pub residual_rms: f64,
    /// `(y, x)` full width at half maximum in pixels.
    pub fwhm: [f64; 2],
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit1D {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub offset: f64,
    pub residual_rms: f64,
    pub fwhm: f64,
    pub iterations: usize,
}

/// Solves the small dense system `a x = b` by Gaussian elimination with
/// partial pivoting. Returns `None` for singular systems.
fn solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..N {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let mut s = b[row];
        for k in row + 1..N {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Generic LM loop over `samples` for a model with `N` parameters.
///
/// `model(p, i, grad)` returns the prediction for sample `i` and writes
/// the parameter gradient.
fn levenberg_marquardt<const N: usize>(
    data: &[f64],
    mut p: [f64; N],
    model: impl Fn(&[f64; N], usize, &mut [f64; N]) -> f64,
    valid: impl Fn(&[f64; N]) -> bool,
) -> Result<([f64; N], f64, usize)> {
    let cost = |p: &[f64; N]| -> f64 {
        let mut g = [0.0; N];
        data.iter()
            .enumerate()
            .map(|(i, &d)| (model(p, i, &mut g) - d).powi(2))
            .sum()
    };
    let mut lambda = 1e-3;
    let mut current = cost(&p);
    for it in 1..=MAX_ITERATIONS {
        let mut jtj = [[0.0; N]; N];
        let mut jtr = [0.0; N];
        let mut g = [0.0; N];
        for (i, &d) in data.iter().enumerate() {
            let r = d - model(&p, i, &mut g);
            for a in 0..N {
                jtr[a] += g[a] * r;
                for b in a..N {
                    jtj[a][b] += g[a] * g[b];
                }
            }
        }
        for a in 0..N {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }
        // Retry with growing damping until the cost decreases.
        let mut accepted = false;
        for _ in 0..40 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-12);
            }
            let Some(delta) = solve(m, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p;
            for a in 0..N {
                trial[a] += delta[a];
            }
            if !valid(&trial) {
                lambda *= 10.0;
                continue;
            }
            let c = cost(&trial);
            if c <= current {
                let step: f64 = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
                let size: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                p = trial;
                let improvement = current - c;
                current = c;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if step <= TOLERANCE * (1.0 + size) || improvement <= 1e-15 * (1.0 + c) {
                    let rms = (current / data.len() as f64).sqrt();
                    return Ok((p, rms, it));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No damping level improves the cost: a local minimum.
            let rms = (current / data.len() as f64).sqrt();
            return Ok((p, rms, it));
        }
    }
    Err(Error::numerical(format!(
        "Gaussian fit did not converge in {MAX_ITERATIONS} iterations"
    )))
}

fn moments_2d(img: &ArrayView2<f64>) -> Result<[f64; 6]> {
    let (h, w) = img.dim();
    let min = img.iter().copied().fold(f64::INFINITY, f64::min);
    let max = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let amp = max - min;
    if !(amp > 1e-12 * max.abs().max(1e-300)) || !amp.is_finite() {
        return Err(Error::numerical("flat patch: no peak to fit"));
    }
    let mut s = 0.0;
    let (mut my, mut mx) = (0.0, 0.0);
    for ((y, x), &v) in img.indexed_iter() {
        let wgt = v - min;
        s += wgt;
        my += wgt * y as f64;
        mx += wgt * x as f64;
    }
    my /= s;
    mx /= s;
    let (mut vy, mut vx) = (0.0, 0.0);
    for ((y, x), &v) in img.indexed_iter() {
        let wgt = v - min;
        vy += wgt * (y as f64 - my).powi(2);
        vx += wgt * (x as f64 - mx).powi(2);
    }
    let clamp = |v: f64, n: usize| (v / s).sqrt().clamp(0.5, n as f64 / 2.0);
    Ok([amp, my, mx, clamp(vy, h), clamp(vx, w), min])
}

/// Fits a 2D axis-aligned Gaussian with constant offset to a patch.
pub fn fit_gaussian_2d(img: &ArrayView2<f64>) -> Result<GaussianFit2D> {
    let (h, w) = img.dim();
    if h < 7 || w < 7 {
        return Err(Error::invalid(format!("patch {h}x{w} is smaller than 7x7")));
    }
    let p0 = moments_2d(img)?;
    let data: Vec<f64> = img.iter().copied().collect();
    let model = |p: &[f64; 6], i: usize, g: &mut [f64; 6]| -> f64 {
        let y = (i / w) as f64;
        let x = (i % w) as f64;
        let dy = y - p[1];
        let dx = x - p[2];
        let (sy2, sx2) = (p[3] * p[3], p[4] * p[4]);
        let e = (-(dy * dy) / (2.0 * sy2) - (dx * dx) / (2.0 * sx2)).exp();
        let ae = p[0] * e;
        g[0] = e;
        g[1] = ae * dy / sy2;
        g[2] = ae * dx / sx2;
        g[3] = ae * dy * dy / (sy2 * p[3]);
        g[4] = ae * dx * dx / (sx2 * p[4]);
        g[5] = 1.0;
        ae + p[5]
    };
    let valid = |p: &[f64; 6]| p[3] > 1e-3 && p[4] > 1e-3 && p.iter().all(|v| v.is_finite());
    let (p, rms, iterations) = levenberg_marquardt(&data, p0, model, valid)?;
    let sigma = [p[3].abs(), p[4].abs()];
    if sigma[0] > h as f64 || sigma[1] > w as f64 {
        return Err(Error::numerical(format!(
            "fitted sigma {sigma:?} exceeds the {h}x{w} patch"
        )));
    }
    if !(p[0] > 0.0) {
        return Err(Error::numerical("fitted amplitude is not positive"));
    }
    Ok(GaussianFit2D {
        amplitude: p[0],
        center: [p[1], p[2]],
        sigma,
        offset: p[5],
        residual_rms: rms,
        fwhm: [fwhm_from_sigma(sigma[0]), fwhm_from_sigma(sigma[1])],
        iterations,
    })
}

/// Convenience wrapper for `f32` images.
pub fn fit_gaussian_2d_f32(img: &ArrayView2<f32>) -> Result<GaussianFit2D> {
    let d: Array2<f64> = img.mapv(|v| v as f64);
    fit_gaussian_2d(&d.view())
}

/// Fits a 1D Gaussian with constant offset to samples at unit spacing.
pub fn fit_gaussian_1d(profile: &ArrayView1<f64>) -> Result<GaussianFit1D> {
    let n = profile.len();
    if n < 5 {
        return Err(Error::invalid(format!("profile of {n} samples is too short")));
    }
    let min = profile.iter().copied().fold(f64::INFINITY, f64::min);
    let max = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let amp = max - min;
    if !(amp > 1e-12 * max.abs().max(1e-300)) {
        return Err(Error::numerical("flat profile: no peak to fit"));
    }
    let s: f64 = profile.iter().map(|v| v - min).sum();
    let c: f64 = profile.iter().enumerate().map(|(i, v)| (v - min) * i as f64).sum::<f64>() / s;
    let var: f64 = profile.iter().enumerate().map(|(i, v)| (v - min) * (i as f64 - c).powi(2)).sum::<f64>() / s;
    let p0 = [amp, c, var.sqrt().clamp(0.5, n as f64 / 2.0), min];
    let data: Vec<f64> = profile.iter().copied().collect();
    let model = |p: &[f64; 4], i: usize, g: &mut [f64; 4]| -> f64 {
        let d = i as f64 - p[1];
        let s2 = p[2] * p[2];
        let e = (-(d * d) / (2.0 * s2)).exp();
        g[0] = e;
        g[1] = p[0] * e * d / s2;
        g[2] = p[0] * e * d * d / (s2 * p[2]);
        g[3] = 1.0;
        p[0] * e + p[3]
    };
    let valid = |p: &[f64; 4]| p[2] > 1e-3 && p.iter().all(|v| v.is_finite());
    let (p, rms, iterations) = levenberg_marquardt(&data, p0, model, valid)?;
    if p[2] > n as f64 || !(p[0] > 0.0) {
        return Err(Error::numerical("1D Gaussian fit failed to find a peak"));
    }
    Ok(GaussianFit1D {
        amplitude: p[0],
        center: p[1],
        sigma: p[2],
        offset: p[3],
        residual_rms: rms,
        fwhm: fwhm_from_sigma(p[2]),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn gaussian(n: usize, c: [f64; 2], s: [f64; 2], a: f64, b: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(y, x)| {
            a * (-((y as f64 - c[0]).powi(2)) / (2.0 * s[0] * s[0])
                - (x as f64 - c[1]).powi(2) / (2.0 * s[1] * s[1]))
                .exp()
                + b
        })
    }

    #[test]
    fn recovers_exact_gaussian() {
        let img = gaussian(21, [10.3, 9.6], [2.0, 2.0], 3.0, 0.5);
        let f = fit_gaussian_2d(&img.view()).unwrap();
        assert!((f.sigma[0] - 2.0).abs() < 1e-6 && (f.sigma[1] - 2.0).abs() < 1e-6);
        assert!((f.fwhm[0] - 4.7096).abs() < 1e-2);
        assert!((f.center[0] - 10.3).abs() < 1e-6);
        assert!(f.residual_rms < 1e-6);
    }

    #[test]
    fn fwhm_constant() {
        assert!((fwhm_from_sigma(1.0) - FWHM_PER_SIGMA).abs() < 1e-12);
    }

    #[test]
    fn flat_patch_fails() {
        let img = Array2::from_elem((9, 9), 2.0);
        assert!(fit_gaussian_2d(&img.view()).is_err());
        assert!(fit_gaussian_2d(&Array2::zeros((5, 5)).view()).is_err());
    }

    #[test]
    fn one_dimensional_fit() {
        let p = Array1::from_shape_fn(31, |i| 2.0 * (-((i as f64 - 14.2).powi(2)) / (2.0 * 9.0)).exp() + 0.1);
        let f = fit_gaussian_1d(&p.view()).unwrap();
        assert!((f.sigma - 3.0).abs() < 1e-6);
        assert!(fit_gaussian_1d(&Array1::from_elem(20, 1.0).view()).is_err());
    }

    #[test]
    fn small_solver() {
        let x = solve([[2.0, 1.0], [1.0, 3.0]], [3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 2.0]).is_none());
    }
}
