//! Volume representation, file I/O and the pre-processing chain.
//!
//! Volumes are stored as `(z, y, x)` grids of `f32` with a physical voxel
//! size in µm per axis. The intensity domain tag distinguishes raw
//! instrument counts from data that has been affinely mapped into `[-1, 1]`.

mod io;
pub(crate) mod preprocess;

pub use io::{load_volume, save_volume, sidecar_path, Sidecar};
pub use preprocess::{
    denormalize, median_filter, normalize_percentile, percentile, resample_isotropic, shear_yz,
    NormalizationRecord,
};

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical voxel size in µm, ordered `(z, y, x)`.
pub type VoxelSize = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityDomain {
    Raw,
    Normalized,
}

/// A 3D scalar grid with physical voxel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f32>,
    voxel_size: VoxelSize,
    domain: IntensityDomain,
}

impl Volume {
    /// Builds a volume, checking the dimension, spacing and domain invariants.
    pub fn new(data: Array3<f32>, voxel_size: VoxelSize, domain: IntensityDomain) -> Result<Self> {
        if data.shape().iter().any(|&n| n == 0) {
            return Err(Error::invalid(format!(
                "volume dimensions must be >= 1, got {:?}",
                data.shape()
            )));
        }
        if voxel_size.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "voxel size components must be positive, got {voxel_size:?}"
            )));
        }
        if domain == IntensityDomain::Normalized
            && data.iter().any(|&v| !(-1.0..=1.0).contains(&v))
        {
            return Err(Error::invalid(
                "normalized volume contains values outside [-1, 1]",
            ));
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().to_owned()
        };
        Ok(Volume {
            data,
            voxel_size,
            domain,
        })
    }

    pub fn raw(data: Array3<f32>, voxel_size: VoxelSize) -> Result<Self> {
        Self::new(data, voxel_size, IntensityDomain::Raw)
    }

    pub fn normalized(data: Array3<f32>, voxel_size: VoxelSize) -> Result<Self> {
        Self::new(data, voxel_size, IntensityDomain::Normalized)
    }

    pub fn zeros(dims: [usize; 3], voxel_size: VoxelSize) -> Result<Self> {
        Self::raw(Array3::zeros(dims), voxel_size)
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn voxel_size(&self) -> VoxelSize {
        self.voxel_size
    }

    pub fn domain(&self) -> IntensityDomain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Physical extent along each axis in µm.
    pub fn extent(&self) -> [f64; 3] {
        let d = self.dims();
        [
            d[0] as f64 * self.voxel_size[0],
            d[1] as f64 * self.voxel_size[1],
            d[2] as f64 * self.voxel_size[2],
        ]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Same geometry, new contents.
    pub fn with_data(&self, data: Array3<f32>, domain: IntensityDomain) -> Result<Self> {
        Self::new(data, self.voxel_size, domain)
    }
}

/// Image planes of a `(z, y, x)` volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Xy,
    Xz,
    Yz,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Xy, Plane::Xz, Plane::Yz];

    /// The axis orthogonal to the plane, i.e. the stacking axis.
    pub fn normal_axis(self) -> usize {
        match self {
            Plane::Xy => 0,
            Plane::Xz => 1,
            Plane::Yz => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::Xy => "xy",
            Plane::Xz => "xz",
            Plane::Yz => "yz",
        }
    }
}

/// All 2D sections orthogonal to `plane`, in index order.
///
/// `xy` sections are `(y, x)` images, `xz` sections are `(z, x)` and `yz`
/// sections are `(z, y)`.
pub fn slice_stack(v: &Array3<f32>, plane: Plane) -> Vec<Array2<f32>> {
    v.axis_iter(Axis(plane.normal_axis()))
        .map(|s| s.to_owned())
        .collect()
}

/// Inverse of [`slice_stack`].
pub fn restack(images: &[Array2<f32>], plane: Plane) -> Result<Array3<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("cannot restack an empty image sequence"))?;
    let (a, b) = first.dim();
    if images.iter().any(|im| im.dim() != (a, b)) {
        return Err(Error::invalid("images in a stack must share dimensions"));
    }
    let n = images.len();
    let dims = match plane {
        Plane::Xy => (n, a, b),
        Plane::Xz => (a, n, b),
        Plane::Yz => (a, b, n),
    };
    let mut out = Array3::zeros(dims);
    for (i, im) in images.iter().enumerate() {
        let view: ArrayView2<f32> = im.view();
        match plane {
            Plane::Xy => out.slice_mut(s![i, .., ..]).assign(&view),
            Plane::Xz => out.slice_mut(s![.., i, ..]).assign(&view),
            Plane::Yz => out.slice_mut(s![.., .., i]).assign(&view),
        }
    }
    Ok(out)
}

/// Half-sample symmetric index reflection (`d c b a | a b c d | d c b a`).
///
/// Works for arbitrarily distant indices by folding with period `2n`.
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut r = i.rem_euclid(period);
    if r >= n {
        r = period - 1 - r;
    }
    r as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_bad_spacing() {
        assert!(Volume::raw(Array3::zeros((0, 2, 2)), [1.0; 3]).is_err());
        assert!(Volume::raw(Array3::zeros((1, 2, 2)), [1.0, 0.0, 1.0]).is_err());
        let mut d = Array3::zeros((1, 1, 2));
        d[[0, 0, 1]] = 1.5;
        assert!(Volume::normalized(d, [1.0; 3]).is_err());
    }

    #[test]
    fn slice_counts() {
        let v = Array3::<f32>::zeros((4, 5, 6));
        let xy = slice_stack(&v, Plane::Xy);
        assert_eq!(xy.len(), 4);
        assert_eq!(xy[0].dim(), (5, 6));
        let xz = slice_stack(&v, Plane::Xz);
        assert_eq!(xz.len(), 5);
        assert_eq!(xz[0].dim(), (4, 6));
        let yz = slice_stack(&v, Plane::Yz);
        assert_eq!(yz.len(), 6);
        assert_eq!(yz[0].dim(), (4, 5));
    }

    #[test]
    fn restack_inverts_slicing() {
        let v = Array3::from_shape_fn((4, 5, 6), |(z, y, x)| (z * 100 + y * 10 + x) as f32);
        for p in Plane::ALL {
            assert_eq!(restack(&slice_stack(&v, p), p).unwrap(), v);
        }
    }

    #[test]
    fn mirror_folds() {
        let got: Vec<usize> = (-4..8).map(|i| mirror_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        assert_eq!(mirror_index(0, 1), 0);
        assert_eq!(mirror_index(-3, 1), 0);
    }
}
