use ndarray::{s, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{IntensityDomain, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augment {
    /// Uniform random rotation about the z axis.
    pub z_rotation: bool,
    /// With probability 1/2, mirror along one uniformly chosen axis.
    pub random_flip: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Augment {
            z_rotation: true,
            random_flip: true,
        }
    }
}

impl Augment {
    pub const NONE: Augment = Augment {
        z_rotation: false,
        random_flip: false,
    };
}

/// Mirrors a volume along one axis.
pub fn flip(v: &Volume, axis: usize) -> Volume {
    let mut d = v.data().clone();
    d.invert_axis(Axis(axis));
    let d = d.as_standard_layout().to_owned();
    v.with_data(d, v.domain()).expect("flip preserves validity")
}

/// Extracts a `crop`-sided cube at `origin` from `v` rotated by `theta`
/// radians about the z axis through the volume centre.
///
/// Samples outside the rotated volume take the domain's background value.
pub fn rotated_crop(v: &Volume, theta: f64, origin: [usize; 3], crop: usize) -> Result<Volume> {
    let [nz, ny, nx] = v.dims();
    if origin[0] + crop > nz || origin[1] + crop > ny || origin[2] + crop > nx {
        return Err(Error::invalid("rotated crop exceeds volume bounds"));
    }
    let fill = match v.domain() {
        IntensityDomain::Normalized => -1.0,
        IntensityDomain::Raw => 0.0,
    };
    let (sin, cos) = theta.sin_cos();
    let cy = (ny as f64 - 1.0) / 2.0;
    let cx = (nx as f64 - 1.0) / 2.0;
    let src = v.data();
    let mut out = Array3::<f32>::zeros((crop, crop, crop));
    for j in 0..crop {
        let yy = (origin[1] + j) as f64 - cy;
        for i in 0..crop {
            let xx = (origin[2] + i) as f64 - cx;
            // Inverse rotation maps output coordinates to source coordinates.
            let sy = cos * yy - sin * xx + cy;
            let sx = sin * yy + cos * xx + cx;
            let inside = sy > -1e-9 && sx > -1e-9 && sy < ny as f64 - 1.0 + 1e-9 && sx < nx as f64 - 1.0 + 1e-9;
            for k in 0..crop {
                out[[k, j, i]] = fill;
            }
            if !inside {
                continue;
            }
            let sy = sy.clamp(0.0, ny as f64 - 1.0);
            let sx = sx.clamp(0.0, nx as f64 - 1.0);
            let y0 = (sy.floor() as usize).min(ny.saturating_sub(2));
            let x0 = (sx.floor() as usize).min(nx.saturating_sub(2));
            let fy = sy - y0 as f64;
            let fx = sx - x0 as f64;
            let y1 = (y0 + 1).min(ny - 1);
            let x1 = (x0 + 1).min(nx - 1);
            let w = [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx];
            for k in 0..crop {
                let z = origin[0] + k;
                let val = w[0] * src[[z, y0, x0]] as f64
                    + w[1] * src[[z, y0, x1]] as f64
                    + w[2] * src[[z, y1, x0]] as f64
                    + w[3] * src[[z, y1, x1]] as f64;
                out[[k, j, i]] = val as f32;
            }
        }
    }
    v.with_data(out, v.domain())
}

/// Draws one training crop: optional z rotation, uniform origin, optional
/// flip. Deterministic for a given generator state.
pub fn sample_crop(v: &Volume, crop: usize, augment: Augment, rng: &mut ChaCha8Rng) -> Result<Volume> {
    let d = v.dims();
    if d.iter().any(|&n| n < crop) || crop == 0 {
        return Err(Error::invalid(format!(
            "volume {d:?} is smaller than crop {crop}"
        )));
    }
    let origin = [
        rng.random_range(0..=d[0] - crop),
        rng.random_range(0..=d[1] - crop),
        rng.random_range(0..=d[2] - crop),
    ];
    let mut out = if augment.z_rotation {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        rotated_crop(v, theta, origin, crop)?
    } else if d == [crop; 3] {
        v.clone()
    } else {
        let cube = v
            .data()
            .slice(s![
                origin[0]..origin[0] + crop,
                origin[1]..origin[1] + crop,
                origin[2]..origin[2] + crop
            ])
            .to_owned();
        v.with_data(cube, v.domain())?
    };
    if augment.random_flip && rng.random_bool(0.5) {
        let axis = rng.random_range(0..3);
        out = flip(&out, axis);
    }
    Ok(out)
}

/// Splits a volume into sub-regions of side `side` (clamped at the far
/// faces) for patch-wise training on large stacks.
pub fn dice(v: &Volume, side: usize) -> Result<Vec<Volume>> {
    let d = v.dims();
    let side = [side.min(d[0]), side.min(d[1]), side.min(d[2])];
    let starts = |n: usize, s: usize| -> Vec<usize> {
        let mut o: Vec<usize> = (0..).map(|i| i * s).take_while(|&x| x + s <= n).collect();
        if *o.last().expect("at least one start") + s < n {
            o.push(n - s);
        }
        o
    };
    let mut out = Vec::new();
    for z in starts(d[0], side[0]) {
        for y in starts(d[1], side[1]) {
            for x in starts(d[2], side[2]) {
                let cube = v
                    .data()
                    .slice(s![z..z + side[0], y..y + side[1], x..x + side[2]])
                    .to_owned();
                out.push(v.with_data(cube, v.domain())?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn vol(n: usize) -> Volume {
        Volume::normalized(
            Array3::from_shape_fn((n, n, n), |(z, y, x)| ((z * 7 + y * 3 + x) % 11) as f32 / 11.0),
            [1.0; 3],
        )
        .unwrap()
    }

    #[test]
    fn whole_volume_crop_without_augmentation_is_identity() {
        let v = vol(8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_crop(&v, 8, Augment::NONE, &mut rng).unwrap(), v);
    }

    #[test]
    fn flip_is_an_involution() {
        let v = vol(6);
        for a in 0..3 {
            assert_eq!(flip(&flip(&v, a), a), v);
        }
    }

    #[test]
    fn quarter_turn_maps_bar_to_other_axis() {
        let n = 21;
        let mut d = Array3::from_elem((3, n, n), -1.0f32);
        // Bar along x through the centre row.
        d.slice_mut(s![.., 10, ..]).fill(1.0);
        let v = Volume::normalized(d, [1.0; 3]).unwrap();
        let r = rotated_crop(&v, std::f64::consts::FRAC_PI_2, [0, 0, 0], 3).unwrap();
        assert_eq!(r.dims(), [3, 3, 3]);
        let big = Volume::normalized(Array3::from_elem((21, n, n), -1.0), [1.0; 3]).unwrap();
        let mut bd = big.data().clone();
        bd.slice_mut(s![.., 10, ..]).fill(1.0);
        let big = big.with_data(bd, IntensityDomain::Normalized).unwrap();
        let rot = rotated_crop(&big, std::f64::consts::FRAC_PI_2, [0, 0, 0], 21).unwrap();
        for z in 0..21 {
            for y in 2..19 {
                for x in 2..19 {
                    let expect = if x == 10 { 1.0 } else { -1.0 };
                    assert!((rot.data()[[z, y, x]] - expect).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn crops_are_seeded_and_bounded() {
        let v = vol(12);
        let a = sample_crop(&v, 8, Augment::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_crop(&v, 8, Augment::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), [8; 3]);
        assert!(sample_crop(&v, 13, Augment::NONE, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn dicing_covers_volume() {
        let v = vol(10);
        let parts = dice(&v, 4).unwrap();
        assert_eq!(parts.len(), 27);
        assert!(parts.iter().all(|p| p.dims() == [4; 3]));
    }
}
