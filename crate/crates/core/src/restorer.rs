//! Tiled whole-volume inference with border cropping and averaged overlaps.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Generator;
use crate::tiler::{extract, plan_tiles, stitch, TileGrid};
use crate::volume::{mirror_index, IntensityDomain, NormalizationRecord, Volume};

/// Something that maps a normalized tile to a tile of the same shape.
pub trait TileModel {
    fn apply_tile(&self, tile: &Volume) -> Result<Volume>;
}

impl TileModel for Generator {
    fn apply_tile(&self, tile: &Volume) -> Result<Volume> {
        self.apply(tile)
    }
}

/// Returns its input unchanged; useful as a fixture for stitching checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityModel;

impl TileModel for IdentityModel {
    fn apply_tile(&self, tile: &Volume) -> Result<Volume> {
        Ok(tile.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferencePlan {
    pub tile: usize,
    pub overlap: usize,
    pub border_crop: usize,
    /// Checkpoint the generator was loaded from, recorded for manifests.
    pub checkpoint: Option<std::path::PathBuf>,
    /// Record used to map the result back to raw intensities.
    pub normalization: Option<NormalizationRecord>,
}

impl Default for InferencePlan {
    fn default() -> Self {
        InferencePlan {
            tile: 120,
            overlap: 30,
            border_crop: 20,
            checkpoint: None,
            normalization: None,
        }
    }
}

impl InferencePlan {
    pub fn validate(&self) -> Result<()> {
        if self.tile == 0 || self.tile % 4 != 0 {
            return Err(Error::Config(format!(
                "tile {} must be a positive multiple of 4",
                self.tile
            )));
        }
        if self.overlap >= self.tile || 2 * self.border_crop >= self.tile {
            return Err(Error::Config(format!(
                "overlap {} and border crop {} do not fit tile {}",
                self.overlap, self.border_crop, self.tile
            )));
        }
        Ok(())
    }

    /// Dimensions after padding short axes up to the tile size.
    pub fn padded_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        dims.map(|d| d.max(self.tile))
    }

    pub fn grid(&self, dims: [usize; 3]) -> Result<TileGrid> {
        self.validate()?;
        plan_tiles(self.padded_dims(dims), self.tile, self.overlap, self.border_crop)
    }
}

/// Mirror-pads every axis shorter than `target` at its far end.
pub fn reflect_pad(v: &Volume, target: [usize; 3]) -> Result<Volume> {
    let d = v.dims();
    if d == target {
        return Ok(v.clone());
    }
    let src = v.data();
    let out = Array3::from_shape_fn((target[0], target[1], target[2]), |(z, y, x)| {
        src[[
            mirror_index(z as isize, d[0]),
            mirror_index(y as isize, d[1]),
            mirror_index(x as isize, d[2]),
        ]]
    });
    v.with_data(out, v.domain())
}

/// Order in which tiles are processed; the result does not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TileOrder {
    #[default]
    Forward,
    Reverse,
}

/// Restores a normalized volume tile by tile.
pub fn restore_volume(model: &impl TileModel, v: &Volume, plan: &InferencePlan) -> Result<Volume> {
    restore_volume_with(model, v, plan, TileOrder::Forward, |_, _| {})
}

/// As [`restore_volume`], with a tile order and a per-tile progress callback
/// receiving `(done, total)`.
pub fn restore_volume_with(
    model: &impl TileModel,
    v: &Volume,
    plan: &InferencePlan,
    order: TileOrder,
    mut progress: impl FnMut(usize, usize),
) -> Result<Volume> {
    if v.domain() != IntensityDomain::Normalized {
        return Err(Error::invalid("restoration input must be normalized"));
    }
    let dims = v.dims();
    let grid = plan.grid(dims)?;
    let padded = reflect_pad(v, grid.volume_dims)?;
    let mut idx: Vec<usize> = (0..grid.len()).collect();
    if order == TileOrder::Reverse {
        idx.reverse();
    }
    let total = idx.len();
    let mut tiles = Vec::with_capacity(total);
    for (done, i) in idx.into_iter().enumerate() {
        let o = grid.origins[i];
        let tile = extract(&padded, o, grid.tile)?;
        let out = model.apply_tile(&tile)?;
        if out.dims() != tile.dims() {
            return Err(Error::invalid(format!(
                "model changed tile shape from {:?} to {:?}",
                tile.dims(),
                out.dims()
            )));
        }
        tiles.push((o, out));
        progress(done + 1, total);
    }
    let stitched = stitch(&tiles, &grid)?;
    if stitched.dims() == dims {
        return Ok(stitched);
    }
    let cropped = stitched
        .data()
        .slice(ndarray::s![..dims[0], ..dims[1], ..dims[2]])
        .to_owned();
    stitched.with_data(cropped, stitched.domain())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: [usize; 3], seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::normalized(
            Array3::from_shape_fn((dims[0], dims[1], dims[2]), |_| rng.random_range(-1.0f32..1.0)),
            [1.0; 3],
        )
        .unwrap()
    }

    struct Square;
    impl TileModel for Square {
        fn apply_tile(&self, t: &Volume) -> Result<Volume> {
            t.with_data(t.data().mapv(|v| v * v), t.domain())
        }
    }

    #[test]
    fn identity_model_reproduces_input() {
        let plan = InferencePlan {
            tile: 16,
            overlap: 6,
            border_crop: 3,
            ..Default::default()
        };
        let v = random([20, 30, 17], 1);
        assert_eq!(restore_volume(&IdentityModel, &v, &plan).unwrap(), v);
    }

    #[test]
    fn small_volumes_are_padded_and_cropped() {
        let plan = InferencePlan {
            tile: 16,
            overlap: 6,
            border_crop: 3,
            ..Default::default()
        };
        let v = random([9, 20, 5], 2);
        assert_eq!(restore_volume(&IdentityModel, &v, &plan).unwrap(), v);
    }

    #[test]
    fn tile_order_does_not_matter() {
        let plan = InferencePlan {
            tile: 12,
            overlap: 4,
            border_crop: 2,
            ..Default::default()
        };
        let v = random([25, 19, 30], 3);
        let a = restore_volume_with(&Square, &v, &plan, TileOrder::Forward, |_, _| {}).unwrap();
        let mut seen = 0;
        let b = restore_volume_with(&Square, &v, &plan, TileOrder::Reverse, |_, _| seen += 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(seen, plan.grid(v.dims()).unwrap().len());
    }

    #[test]
    fn default_plan_on_240_has_27_tiles() {
        let plan = InferencePlan::default();
        assert_eq!(plan.grid([240; 3]).unwrap().len(), 27);
        let bad = InferencePlan { tile: 30, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn raw_input_is_rejected() {
        let v = Volume::raw(Array3::zeros((16, 16, 16)), [1.0; 3]).unwrap();
        assert!(restore_volume(&IdentityModel, &v, &InferencePlan { tile: 16, overlap: 4, border_crop: 2, ..Default::default() }).is_err());
    }
}
