//! Least-squares adversarial and L1 cycle losses, with their gradients.

use crate::error::{Error, Result};
use crate::nn::{Discriminator, Tensor};
use crate::volume::{Plane, Volume};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub gan_real_label: f64,
    pub gan_fake_label: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cyc: 10.0,
            gan_real_label: 1.0,
            gan_fake_label: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cyc > 0.0 && self.lambda_cyc.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_cyc must be positive, got {}",
                self.lambda_cyc
            )));
        }
        Ok(())
    }
}

/// `mean((s - label)^2)` and its gradient with respect to `s`.
pub fn squared_error(scores: &Tensor, label: f64) -> (f64, Tensor) {
    let n = scores.len() as f64;
    let mut acc = 0.0;
    let mut grad = Tensor::zeros(scores.shape());
    for (g, &s) in grad.data_mut().iter_mut().zip(scores.data()) {
        let d = s as f64 - label;
        acc += d * d;
        *g = (2.0 * d / n) as f32;
    }
    (acc / n, grad)
}

/// Discriminator objective from precomputed score maps.
pub fn d_loss_scores(real: &Tensor, fake: &Tensor, w: &LossWeights) -> (f64, Tensor, Tensor) {
    let (lr, gr) = squared_error(real, w.gan_real_label);
    let (lf, gf) = squared_error(fake, w.gan_fake_label);
    (lr + lf, gr, gf)
}

/// Generator objective from precomputed score maps.
pub fn g_loss_scores(fake: &Tensor, w: &LossWeights) -> (f64, Tensor) {
    squared_error(fake, w.gan_real_label)
}

fn check_batch(x: &Tensor) -> Result<()> {
    if x.batch() == 0 || x.is_empty() {
        return Err(Error::invalid("empty image batch"));
    }
    Ok(())
}

/// Least-squares discriminator loss on image batches `[1, N, 1, H, W]`.
pub fn lsgan_d_loss(d: &Discriminator, real: &Tensor, fake: &Tensor, w: &LossWeights) -> Result<f64> {
    check_batch(real)?;
    check_batch(fake)?;
    let sr = d.forward(real.clone())?;
    let sf = d.forward(fake.clone())?;
    Ok(d_loss_scores(&sr, &sf, w).0)
}

/// Least-squares generator loss on a fake image batch.
pub fn lsgan_g_loss(d: &Discriminator, fake: &Tensor, w: &LossWeights) -> Result<f64> {
    check_batch(fake)?;
    let sf = d.forward(fake.clone())?;
    Ok(g_loss_scores(&sf, w).0)
}

/// Mean absolute difference, and its (sub)gradient with respect to `a`.
pub fn l1_with_grad(a: &Tensor, b: &Tensor, scale: f64) -> (f64, Tensor) {
    assert_eq!(a.shape(), b.shape());
    let n = a.len() as f64;
    let mut acc = 0.0;
    let mut grad = Tensor::zeros(a.shape());
    let gs = (scale / n) as f32;
    for ((g, &p), &q) in grad.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        let d = p - q;
        acc += (d as f64).abs();
        *g = if d > 0.0 {
            gs
        } else if d < 0.0 {
            -gs
        } else {
            0.0
        };
    }
    (acc / n, grad)
}

/// Mean absolute difference between two volumes.
pub fn cycle_loss(y: &Volume, y_cyc: &Volume) -> Result<f64> {
    if y.dims() != y_cyc.dims() {
        return Err(Error::invalid(format!(
            "cycle loss needs equal dims, got {:?} and {:?}",
            y.dims(),
            y_cyc.dims()
        )));
    }
    let n = y.len() as f64;
    Ok(y.data()
        .iter()
        .zip(y_cyc.data().iter())
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum::<f64>()
        / n)
}

/// Slices a `[1, 1, D, H, W]` volume tensor into a `[1, n, 1, a, b]` image
/// batch: xy gives D images of `H x W`, xz gives H images of `D x W`, yz
/// gives W images of `D x H`.
pub fn plane_batch(v: &Tensor, plane: Plane) -> Tensor {
    let [c, n, d, h, w] = v.shape();
    assert!(c == 1 && n == 1, "plane slicing expects a single volume");
    match plane {
        Plane::Xy => v.clone().reshape([1, d, 1, h, w]),
        Plane::Xz => {
            let src = v.data();
            let mut out = vec![0f32; src.len()];
            for z in 0..d {
                for y in 0..h {
                    let s = &src[(z * h + y) * w..(z * h + y + 1) * w];
                    out[(y * d + z) * w..(y * d + z + 1) * w].copy_from_slice(s);
                }
            }
            Tensor::from_vec([1, h, 1, d, w], out)
        }
        Plane::Yz => {
            let src = v.data();
            let mut out = vec![0f32; src.len()];
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        out[(x * d + z) * h + y] = src[(z * h + y) * w + x];
                    }
                }
            }
            Tensor::from_vec([1, w, 1, d, h], out)
        }
    }
}

/// Inverse of [`plane_batch`] for a volume of spatial shape `dims`.
pub fn plane_unbatch(b: &Tensor, plane: Plane, dims: [usize; 3]) -> Tensor {
    let [d, h, w] = dims;
    assert_eq!(b.len(), d * h * w, "batch does not match volume size");
    let src = b.data();
    let mut out = vec![0f32; src.len()];
    match plane {
        Plane::Xy => out.copy_from_slice(src),
        Plane::Xz => {
            for z in 0..d {
                for y in 0..h {
                    out[(z * h + y) * w..(z * h + y + 1) * w]
                        .copy_from_slice(&src[(y * d + z) * w..(y * d + z + 1) * w]);
                }
            }
        }
        Plane::Yz => {
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        out[(z * h + y) * w + x] = src[(x * d + z) * h + y];
                    }
                }
            }
        }
    }
    Tensor::from_vec([1, 1, d, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::slice_stack;
    use ndarray::Array3;

    #[test]
    fn plane_batches_match_volume_slices() {
        let a = Array3::from_shape_fn((3, 4, 5), |(z, y, x)| (z * 100 + y * 10 + x) as f32);
        let t = Tensor::from_vec([1, 1, 3, 4, 5], a.iter().copied().collect());
        for plane in Plane::ALL {
            let b = plane_batch(&t, plane);
            let imgs = slice_stack(&a, plane);
            let flat: Vec<f32> = imgs.iter().flat_map(|i| i.iter().copied()).collect();
            assert_eq!(b.data(), &flat[..], "{plane:?}");
            assert_eq!(b.batch(), imgs.len());
            assert_eq!(plane_unbatch(&b, plane, [3, 4, 5]), t);
        }
    }

    #[test]
    fn squared_error_matches_brute_force() {
        let s = Tensor::from_vec([1, 1, 1, 5, 5], (0..25).map(|i| (i as f32 * 0.37).sin()).collect());
        let (l, _) = squared_error(&s, 1.0);
        let brute: f64 = s.data().iter().map(|&v| (v as f64 - 1.0).powi(2)).sum::<f64>() / 25.0;
        assert!((l - brute).abs() < 1e-6);
    }

    #[test]
    fn label_cases() {
        let w = LossWeights::default();
        let ones = Tensor::filled([1, 2, 1, 3, 3], 1.0);
        let zeros = Tensor::filled([1, 2, 1, 3, 3], 0.0);
        let half = Tensor::filled([1, 2, 1, 3, 3], 0.5);
        assert_eq!(d_loss_scores(&ones, &zeros, &w).0, 0.0);
        assert_eq!(d_loss_scores(&zeros, &zeros, &w).0, 1.0);
        assert_eq!(d_loss_scores(&half, &half, &w).0, 0.5);
        assert_eq!(g_loss_scores(&ones, &w).0, 0.0);
        assert_eq!(g_loss_scores(&zeros, &w).0, 1.0);
        assert_eq!(g_loss_scores(&Tensor::filled([1, 1, 1, 2, 2], -1.0), &w).0, 4.0);
    }

    #[test]
    fn cycle_loss_cases() {
        let a = Volume::raw(Array3::from_elem((2, 3, 4), 0.5), [1.0; 3]).unwrap();
        let b = Volume::raw(Array3::from_elem((2, 3, 4), 0.25), [1.0; 3]).unwrap();
        assert_eq!(cycle_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(cycle_loss(&a, &b).unwrap(), 0.25);
        let c = Volume::raw(Array3::zeros((2, 3, 5)), [1.0; 3]).unwrap();
        assert!(cycle_loss(&a, &c).is_err());
    }
}
