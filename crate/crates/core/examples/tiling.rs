//! Overlapping tile plans: grid layout, coverage audit, and the identity
//! round trip through extraction and stitching.
//!
//! `cargo run --release --example tiling`

use isocycle::tiler::{extract, plan_tiles, stitch};
use isocycle::volume::Volume;
use ndarray::Array3;

fn main() -> anyhow::Result<()> {
    let dims = [150, 200, 170];
    let grid = plan_tiles(dims, 120, 30, 20)?;
    println!("{} tiles, stride {}", grid.len(), grid.stride);
    for axis in 0..3 {
        println!("  axis {axis} origins {:?}", grid.axis_origins(axis));
    }
    let cov = grid.coverage();
    let (min, max) = cov.iter().fold((u32::MAX, 0), |(a, b), &c| (a.min(c), b.max(c)));
    println!("coverage between {min} and {max}");

    let v = Volume::normalized(
        Array3::from_shape_fn(dims, |(z, y, x)| (((z * 31 + y * 17 + x * 7) % 200) as f32 / 100.0) - 1.0),
        [0.5; 3],
    )?;
    let tiles = grid
        .origins
        .iter()
        .map(|&o| Ok((o, extract(&v, o, grid.tile)?)))
        .collect::<isocycle::Result<Vec<_>>>()?;
    let back = stitch(&tiles, &grid)?;
    println!("stitch(extract(v)) == v: {}", back.data() == v.data());
    println!("{}", grid.to_manifest()?.lines().take(6).collect::<Vec<_>>().join("\n"));
    Ok(())
}
