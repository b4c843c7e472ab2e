//! Overlapping cubic tiling of volumes and order-independent stitching.

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{IntensityDomain, Volume};

/// A deterministic plan of overlapping cubic tiles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub volume_dims: [usize; 3],
    pub tile: usize,
    pub overlap: usize,
    pub border_crop: usize,
    /// Effective stride; never larger than `tile - 2 * border_crop`.
    pub stride: usize,
    pub origins: Vec<[usize; 3]>,
}

fn axis_origins(dim: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0usize;
    loop {
        let clamped = o.min(dim - tile);
        if out.last() != Some(&clamped) {
            out.push(clamped);
        }
        if o + tile >= dim {
            break;
        }
        o += stride;
    }
    out
}

/// Plans tiles of side `tile` overlapping by `overlap` voxels.
///
/// The stride is `min(tile - overlap, tile - 2 * border_crop)` so the
/// retained (border-cropped) regions always cover the volume. The last
/// origin on each axis is clamped to `dim - tile`.
pub fn plan_tiles(
    dims: [usize; 3],
    tile: usize,
    overlap: usize,
    border_crop: usize,
) -> Result<TileGrid> {
    if tile == 0 {
        return Err(Error::invalid("tile size must be positive"));
    }
    if let Some(d) = dims.iter().find(|&&d| d < tile) {
        return Err(Error::invalid(format!(
            "tile {tile} is larger than volume dimension {d}"
        )));
    }
    if overlap >= tile {
        return Err(Error::invalid(format!(
            "overlap {overlap} must be smaller than tile {tile}"
        )));
    }
    if 2 * border_crop >= tile {
        return Err(Error::invalid(format!(
            "border crop {border_crop} leaves no retained region in tile {tile}"
        )));
    }
    let stride = (tile - overlap).min(tile - 2 * border_crop);
    let per_axis: Vec<Vec<usize>> = dims.iter().map(|&d| axis_origins(d, tile, stride)).collect();
    let mut origins = Vec::with_capacity(per_axis.iter().map(Vec::len).product());
    for &z in &per_axis[0] {
        for &y in &per_axis[1] {
            for &x in &per_axis[2] {
                origins.push([z, y, x]);
            }
        }
    }
    Ok(TileGrid {
        volume_dims: dims,
        tile,
        overlap,
        border_crop,
        stride,
        origins,
    })
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Distinct origins along one axis.
    pub fn axis_origins(&self, axis: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.origins.iter().map(|o| o[axis]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Half-open retained range in tile-local coordinates along one axis.
    /// Faces touching the volume boundary keep their border voxels.
    pub fn retained_range(&self, origin: [usize; 3], axis: usize) -> (usize, usize) {
        let o = origin[axis];
        let lo = if o == 0 { 0 } else { self.border_crop };
        let hi = if o + self.tile == self.volume_dims[axis] {
            self.tile
        } else {
            self.tile - self.border_crop
        };
        (lo, hi)
    }

    /// Number of retained regions covering each voxel.
    pub fn coverage(&self) -> Array3<u32> {
        let mut cov = Array3::<u32>::zeros(self.volume_dims);
        for &o in &self.origins {
            let (z0, z1) = self.retained_range(o, 0);
            let (y0, y1) = self.retained_range(o, 1);
            let (x0, x1) = self.retained_range(o, 2);
            cov.slice_mut(s![
                o[0] + z0..o[0] + z1,
                o[1] + y0..o[1] + y1,
                o[2] + x0..o[2] + x1
            ])
            .mapv_inplace(|c| c + 1);
        }
        cov
    }

    /// Serializes the grid as a TOML manifest.
    pub fn to_manifest(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Copies the cube of side `tile` starting at `origin`.
pub fn extract(v: &Volume, origin: [usize; 3], tile: usize) -> Result<Volume> {
    let d = v.dims();
    for a in 0..3 {
        if origin[a] + tile > d[a] {
            return Err(Error::invalid(format!(
                "tile at {origin:?} with side {tile} exceeds volume dims {d:?}"
            )));
        }
    }
    let cube = v
        .data()
        .slice(s![
            origin[0]..origin[0] + tile,
            origin[1]..origin[1] + tile,
            origin[2]..origin[2] + tile
        ])
        .to_owned();
    v.with_data(cube, v.domain())
}

/// Writes `tile` back into `v` at `origin`.
pub fn insert(v: &mut Array3<f32>, origin: [usize; 3], tile: &Array3<f32>) -> Result<()> {
    let t = tile.shape();
    let d = v.shape();
    for a in 0..3 {
        if origin[a] + t[a] > d[a] {
            return Err(Error::invalid("inserted tile exceeds volume bounds"));
        }
    }
    v.slice_mut(s![
        origin[0]..origin[0] + t[0],
        origin[1]..origin[1] + t[1],
        origin[2]..origin[2] + t[2]
    ])
    .assign(tile);
    Ok(())
}

/// Reassembles processed tiles.
///
/// Each tile contributes its retained region; overlapping retained voxels
/// are averaged. Tiles are accumulated in origin order, so the result does
/// not depend on the order of `tiles`.
pub fn stitch(tiles: &[([usize; 3], Volume)], grid: &TileGrid) -> Result<Volume> {
    let first = tiles
        .first()
        .ok_or_else(|| Error::invalid("no tiles to stitch"))?;
    let voxel = first.1.voxel_size();
    let domain = first.1.domain();

    let mut order: Vec<usize> = (0..tiles.len()).collect();
    order.sort_by_key(|&i| tiles[i].0);
    for w in order.windows(2) {
        if tiles[w[0]].0 == tiles[w[1]].0 {
            return Err(Error::invalid(format!(
                "duplicate tile at origin {:?}",
                tiles[w[0]].0
            )));
        }
    }
    let mut expected = grid.origins.clone();
    expected.sort_unstable();
    let mut got: Vec<[usize; 3]> = order.iter().map(|&i| tiles[i].0).collect();
    got.sort_unstable();
    if let Some(missing) = expected.iter().find(|o| got.binary_search(o).is_err()) {
        return Err(Error::invalid(format!("missing tile at origin {missing:?}")));
    }
    if let Some(extra) = got.iter().find(|o| expected.binary_search(o).is_err()) {
        return Err(Error::invalid(format!(
            "tile at {extra:?} is not part of the grid"
        )));
    }

    let mut sum = Array3::<f64>::zeros(grid.volume_dims);
    let mut count = Array3::<u32>::zeros(grid.volume_dims);
    for &i in &order {
        let (o, vol) = &tiles[i];
        if vol.dims() != [grid.tile; 3] {
            return Err(Error::invalid(format!(
                "tile at {o:?} has dims {:?}, expected side {}",
                vol.dims(),
                grid.tile
            )));
        }
        let (z0, z1) = grid.retained_range(*o, 0);
        let (y0, y1) = grid.retained_range(*o, 1);
        let (x0, x1) = grid.retained_range(*o, 2);
        let src = vol.data().slice(s![z0..z1, y0..y1, x0..x1]);
        let dst = s![o[0] + z0..o[0] + z1, o[1] + y0..o[1] + y1, o[2] + x0..o[2] + x1];
        ndarray::Zip::from(sum.slice_mut(dst))
            .and(count.slice_mut(dst))
            .and(&src)
            .for_each(|s, c, &v| {
                *s += v as f64;
                *c += 1;
            });
    }
    if count.iter().any(|&c| c == 0) {
        return Err(Error::invalid("tile grid leaves voxels uncovered"));
    }
    let out = ndarray::Zip::from(&sum)
        .and(&count)
        .map_collect(|&s, &c| (s / c as f64) as f32);
    let domain = if domain == IntensityDomain::Normalized
        && out.iter().any(|v| !(-1.0..=1.0).contains(v))
    {
        IntensityDomain::Raw
    } else {
        domain
    };
    Volume::new(out, voxel, domain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_stride_without_border() {
        let g = plan_tiles([240; 3], 120, 30, 0).unwrap();
        assert_eq!(g.axis_origins(0), vec![0, 90, 120]);
        assert_eq!(g.len(), 27);
    }

    #[test]
    fn single_tile_when_dims_equal_tile() {
        let g = plan_tiles([64; 3], 64, 30, 20).unwrap();
        assert_eq!(g.origins, vec![[0, 0, 0]]);
    }

    #[test]
    fn clamping_on_one_long_axis() {
        let g = plan_tiles([120, 120, 121], 120, 30, 0).unwrap();
        assert_eq!(g.axis_origins(0), vec![0]);
        assert_eq!(g.axis_origins(1), vec![0]);
        assert_eq!(g.axis_origins(2), vec![0, 1]);
    }

    #[test]
    fn stride_shrinks_to_keep_coverage() {
        let g = plan_tiles([240; 3], 120, 30, 20).unwrap();
        assert_eq!(g.stride, 80);
        assert_eq!(g.axis_origins(0), vec![0, 80, 120]);
        assert!(g.coverage().iter().all(|&c| c >= 1));
    }

    #[test]
    fn invalid_plans() {
        assert!(plan_tiles([100; 3], 120, 30, 20).is_err());
        assert!(plan_tiles([200; 3], 120, 120, 0).is_err());
        assert!(plan_tiles([200; 3], 120, 30, 60).is_err());
    }

    #[test]
    fn extract_whole_and_out_of_bounds() {
        let v = Volume::raw(Array3::from_elem((4, 4, 4), 2.0), [1.0; 3]).unwrap();
        assert_eq!(extract(&v, [0, 0, 0], 4).unwrap(), v);
        assert!(extract(&v, [1, 0, 0], 4).is_err());
    }

    #[test]
    fn averaging_in_overlap() {
        let g = plan_tiles([6, 4, 4], 4, 2, 0).unwrap();
        assert_eq!(g.axis_origins(0), vec![0, 2]);
        let a = Volume::raw(Array3::from_elem((4, 4, 4), 1.0), [1.0; 3]).unwrap();
        let b = Volume::raw(Array3::from_elem((4, 4, 4), 3.0), [1.0; 3]).unwrap();
        let out = stitch(&[([0, 0, 0], a), ([2, 0, 0], b)], &g).unwrap();
        assert_eq!(out.data()[[0, 0, 0]], 1.0);
        assert_eq!(out.data()[[2, 1, 1]], 2.0);
        assert_eq!(out.data()[[3, 1, 1]], 2.0);
        assert_eq!(out.data()[[5, 1, 1]], 3.0);
    }

    #[test]
    fn missing_tile_is_an_error() {
        let g = plan_tiles([6, 4, 4], 4, 2, 0).unwrap();
        let a = Volume::raw(Array3::zeros((4, 4, 4)), [1.0; 3]).unwrap();
        assert!(stitch(&[([0, 0, 0], a)], &g).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let g = plan_tiles([130, 150, 170], 120, 30, 20).unwrap();
        let text = g.to_manifest().unwrap();
        assert_eq!(TileGrid::from_manifest(&text).unwrap(), g);
    }
}
