//! 3D convolution with half-sample symmetric (reflective) boundaries.
//!
//! Separable kernels are applied axis by axis in the spatial domain; dense
//! kernels go through a mirror-padded FFT. With a symmetric kernel the
//! reflective operator is self-adjoint, so total intensity is preserved.

use ndarray::{Array3, Axis, Zip};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::volume::mirror_index;

/// Convolves every lane along `axis` with an odd-length centred kernel.
pub fn convolve_axis(a: &Array3<f64>, axis: usize, kernel: &[f64]) -> Array3<f64> {
    assert!(kernel.len() % 2 == 1, "kernel length must be odd");
    let h = (kernel.len() / 2) as isize;
    let n = a.shape()[axis];
    let mut out = Array3::<f64>::zeros(a.raw_dim());
    let mut padded = vec![0f64; n + 2 * h as usize];
    Zip::from(a.lanes(Axis(axis)))
        .and(out.lanes_mut(Axis(axis)))
        .for_each(|src, mut dst| {
            for (j, p) in padded.iter_mut().enumerate() {
                *p = src[mirror_index(j as isize - h, n)];
            }
            for i in 0..n {
                // out[i] = sum_k kernel[k] * in[i + h - k]
                let mut acc = 0.0;
                for (k, &w) in kernel.iter().enumerate() {
                    acc += w * padded[i + 2 * h as usize - k];
                }
                dst[i] = acc;
            }
        });
    out
}

pub fn separable_convolve(a: &Array3<f64>, kernels: [&[f64]; 3]) -> Array3<f64> {
    let mut cur = convolve_axis(a, 0, kernels[0]);
    cur = convolve_axis(&cur, 1, kernels[1]);
    convolve_axis(&cur, 2, kernels[2])
}

fn fft_axis(a: &mut Array3<Complex64>, axis: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let n = a.shape()[axis];
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for mut lane in a.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
}

/// In-place unnormalized 3D DFT.
pub(crate) fn fft3(a: &mut Array3<Complex64>, inverse: bool) {
    let mut planner = FftPlanner::new();
    for axis in 0..3 {
        fft_axis(a, axis, &mut planner, inverse);
    }
}

/// Dense convolution with an odd-sized, centred kernel.
pub fn fft_convolve(a: &Array3<f64>, kernel: &Array3<f64>) -> Result<Array3<f64>> {
    let ks = kernel.shape();
    if ks.iter().any(|&k| k % 2 == 0) {
        return Err(Error::invalid(format!(
            "kernel dimensions must be odd, got {ks:?}"
        )));
    }
    let half = [ks[0] / 2, ks[1] / 2, ks[2] / 2];
    let d = a.shape();
    let pd = [d[0] + 2 * half[0], d[1] + 2 * half[1], d[2] + 2 * half[2]];
    let mut buf = Array3::<Complex64>::from_shape_fn(pd, |(z, y, x)| {
        let zz = mirror_index(z as isize - half[0] as isize, d[0]);
        let yy = mirror_index(y as isize - half[1] as isize, d[1]);
        let xx = mirror_index(x as isize - half[2] as isize, d[2]);
        Complex64::new(a[[zz, yy, xx]], 0.0)
    });
    // Kernel centre wrapped to the origin.
    let mut kb = Array3::<Complex64>::zeros(pd);
    for ((z, y, x), &w) in kernel.indexed_iter() {
        let zz = (z as isize - half[0] as isize).rem_euclid(pd[0] as isize) as usize;
        let yy = (y as isize - half[1] as isize).rem_euclid(pd[1] as isize) as usize;
        let xx = (x as isize - half[2] as isize).rem_euclid(pd[2] as isize) as usize;
        kb[[zz, yy, xx]] = Complex64::new(w, 0.0);
    }
    fft3(&mut buf, false);
    fft3(&mut kb, false);
    Zip::from(&mut buf).and(&kb).for_each(|b, &k| *b *= k);
    fft3(&mut buf, true);
    let scale = 1.0 / (pd[0] * pd[1] * pd[2]) as f64;
    Ok(Array3::from_shape_fn((d[0], d[1], d[2]), |(z, y, x)| {
        buf[[z + half[0], y + half[1], x + half[2]]].re * scale
    }))
}

/// A convolution kernel, stored separably when it factors exactly.
#[derive(Debug, Clone)]
pub enum Kernel3 {
    Separable([Vec<f64>; 3]),
    Dense(Array3<f64>),
}

impl Kernel3 {
    /// Analyses a dense kernel; rank-one kernels are factored into their
    /// axis marginals.
    pub fn from_dense(k: &Array3<f64>) -> Result<Self> {
        if k.shape().iter().any(|&n| n % 2 == 0) {
            return Err(Error::invalid(format!(
                "kernel dimensions must be odd, got {:?}",
                k.shape()
            )));
        }
        let total: f64 = k.sum();
        if !(total.abs() > 0.0) {
            return Err(Error::invalid("kernel sums to zero"));
        }
        let marginal = |axis: usize| -> Vec<f64> {
            k.axis_iter(Axis(axis)).map(|s| s.sum() / total).collect()
        };
        let (mz, my, mx) = (marginal(0), marginal(1), marginal(2));
        let scale = k.iter().fold(0f64, |m, v| m.max(v.abs()));
        let separable = k.indexed_iter().all(|((z, y, x), &v)| {
            (v - total * mz[z] * my[y] * mx[x]).abs() <= 1e-12 * scale
        });
        if separable {
            let mut mz = mz;
            for v in &mut mz {
                *v *= total;
            }
            Ok(Kernel3::Separable([mz, my, mx]))
        } else {
            Ok(Kernel3::Dense(k.clone()))
        }
    }

    /// Point reflection of the kernel (the adjoint for correlation).
    pub fn flipped(&self) -> Self {
        match self {
            Kernel3::Separable([a, b, c]) => Kernel3::Separable([
                a.iter().rev().copied().collect(),
                b.iter().rev().copied().collect(),
                c.iter().rev().copied().collect(),
            ]),
            Kernel3::Dense(k) => {
                let mut f = k.clone();
                for ax in 0..3 {
                    f.invert_axis(Axis(ax));
                }
                Kernel3::Dense(f.as_standard_layout().to_owned())
            }
        }
    }

    pub fn apply(&self, a: &Array3<f64>) -> Result<Array3<f64>> {
        match self {
            Kernel3::Separable([kz, ky, kx]) => Ok(separable_convolve(a, [kz, ky, kx])),
            Kernel3::Dense(k) => fft_convolve(a, k),
        }
    }
}
