//! Richardson–Lucy deconvolution with reflective boundaries.

use ndarray::{Array3, Zip};

use crate::error::{Error, Result};
use crate::filters::Kernel3;
use crate::volume::Volume;

pub const DEFAULT_ITERATIONS: usize = 10;

/// Relative size of the division guard, as a fraction of the data maximum.
pub const EPSILON_FRACTION: f64 = 1e-12;

/// Output of [`rl_deconvolve_traced`].
#[derive(Debug, Clone)]
pub struct RlTrace {
    pub volume: Volume,
    /// Poisson log-likelihood `Σ d·ln(Hu) − Hu` of the start point and of
    /// each iterate (length `iterations + 1`).
    pub log_likelihood: Vec<f64>,
}

fn prepare(v: &Volume, psf: &Volume) -> Result<(Array3<f64>, Kernel3, Kernel3, f64)> {
    let d = v.data().mapv(|x| x as f64);
    if d.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::invalid("deconvolution input must be finite and non-negative"));
    }
    let k = psf.data().mapv(|x| x as f64);
    if k.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::invalid("PSF must be finite and non-negative"));
    }
    let total = k.sum();
    if !(total > 0.0) {
        return Err(Error::invalid("PSF is zero"));
    }
    let k = k / total;
    let fwd = Kernel3::from_dense(&k)?;
    let adj = fwd.flipped();
    let eps = EPSILON_FRACTION * d.iter().copied().fold(0.0, f64::max);
    Ok((d, fwd, adj, eps))
}

fn log_likelihood(d: &Array3<f64>, hu: &Array3<f64>, eps: f64) -> f64 {
    Zip::from(d).and(hu).fold(0.0, |acc, &di, &h| {
        let h = h.max(eps);
        if di > 0.0 {
            acc + di * h.ln() - h
        } else {
            acc - h
        }
    })
}

fn run(v: &Volume, psf: &Volume, iterations: usize, trace: bool) -> Result<RlTrace> {
    if iterations == 0 {
        return Err(Error::invalid("iterations must be at least 1"));
    }
    let (d, fwd, adj, eps) = prepare(v, psf)?;
    let mut u = d.clone();
    let mut ll = Vec::new();
    for _ in 0..iterations {
        let hu = fwd.apply(&u)?;
        if trace {
            ll.push(log_likelihood(&d, &hu, eps));
        }
        let ratio = Zip::from(&d).and(&hu).map_collect(|&di, &h| di / h.max(eps));
        let corr = adj.apply(&ratio)?;
        Zip::from(&mut u).and(&corr).for_each(|x, &c| *x *= c);
    }
    if trace {
        ll.push(log_likelihood(&d, &fwd.apply(&u)?, eps));
    }
    let out = u.mapv(|x| x as f32);
    Ok(RlTrace {
        volume: v.with_data(out, crate::volume::IntensityDomain::Raw)?,
        log_likelihood: ll,
    })
}

/// Multiplicative updates `u ← u · H†(d / max(Hu, ε))`, starting from the data.
pub fn rl_deconvolve(v: &Volume, psf: &Volume, iterations: usize) -> Result<Volume> {
    Ok(run(v, psf, iterations, false)?.volume)
}

/// As [`rl_deconvolve`], also recording the data likelihood per iterate.
pub fn rl_deconvolve_traced(v: &Volume, psf: &Volume, iterations: usize) -> Result<RlTrace> {
    run(v, psf, iterations, true)
}
