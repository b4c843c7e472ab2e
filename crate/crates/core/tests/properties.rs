//! Randomized checks of the invariants each module promises.

use isocycle::metrics::{fit_gaussian_2d, fourier_profile, fwhm_from_sigma, mip, psnr};
use isocycle::phantom::{blur, make_beads, BeadSpec, PhantomObject};
use isocycle::tiler::{extract, plan_tiles, stitch};
use isocycle::trainer::{d_loss_scores, g_loss_scores, LossWeights};
use isocycle::nn::Tensor;
use isocycle::volume::{
    load_volume, normalize_percentile, resample_isotropic, restack, save_volume, shear_yz, slice_stack, Plane,
    Volume,
};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_array(dims: [usize; 3], seed: u64) -> Array3<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn(dims, |_| rng.random_range(0.0f32..10.0))
}

fn small_dims() -> impl Strategy<Value = [usize; 3]> {
    [1usize..12, 1usize..12, 1usize..12]
}

fn bounds(a: &Array3<f32>) -> (f32, f32) {
    a.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalization_range_and_affine_invariance(
        dims in [2usize..10, 2usize..10, 2usize..10],
        seed in any::<u64>(),
        log2_scale in -3i32..4,
        offset in -50i32..50,
        lo in 0.0f64..20.0,
        width in 5.0f64..80.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Array3::from_shape_fn(dims, |_| rng.random_range(0..2000) as f32);
        prop_assume!(bounds(&d).0 < bounds(&d).1);
        let scale = 2f32.powi(log2_scale);
        let shifted = d.mapv(|x| scale * x + offset as f32);
        let hi = (lo + width).min(100.0);
        let a = normalize_percentile(&Volume::raw(d, [1.0; 3]).unwrap(), lo, hi);
        let b = normalize_percentile(&Volume::raw(shifted, [1.0; 3]).unwrap(), lo, hi);
        match (a, b) {
            (Ok((a, ra)), Ok((b, _))) => {
                let (mn, mx) = a.min_max();
                prop_assert!(mn >= -1.0 && mx <= 1.0);
                prop_assert!(ra.low_clip < ra.high_clip);
                prop_assert_eq!(a.data(), b.data());
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "affine rescale changed whether normalization succeeds"),
        }
    }

    #[test]
    fn resample_and_shear_stay_within_input_range(
        dims in [2usize..10, 2usize..10, 2usize..10],
        seed in any::<u64>(),
        vz in 0.5f64..3.0,
        target in 0.4f64..1.5,
        shear in -1.5f64..1.5,
    ) {
        let a = random_array(dims, seed);
        let (lo, hi) = bounds(&a);
        let v = Volume::raw(a, [vz, 1.0, 1.0]).unwrap();
        let r = resample_isotropic(&v, target).unwrap();
        let (rlo, rhi) = r.min_max();
        prop_assert!(rlo >= lo - 1e-5 && rhi <= hi + 1e-5);
        prop_assert_eq!(r.voxel_size(), [target; 3]);
        // Raw shear pads with zero, which lies below every sample here.
        let s = shear_yz(&v, shear).unwrap();
        let (slo, shi) = s.min_max();
        prop_assert!(slo >= 0.0_f32.min(lo) - 1e-5 && shi <= hi + 1e-5);
        prop_assert!(s.dims()[1] >= v.dims()[1]);
    }

    #[test]
    fn slicing_and_restacking_is_a_bijection(dims in small_dims(), seed in any::<u64>()) {
        let a = random_array(dims, seed);
        for plane in Plane::ALL {
            let slices = slice_stack(&a, plane);
            prop_assert_eq!(slices.len(), dims[plane.normal_axis()]);
            prop_assert_eq!(restack(&slices, plane).unwrap(), a.clone());
        }
    }

    #[test]
    fn stitching_extracted_tiles_is_exact(
        dims in [24usize..70, 24usize..70, 24usize..70],
        tile_q in 4usize..7,
        overlap in 0usize..12,
        border in 0usize..8,
        seed in any::<u64>(),
    ) {
        let tile = 4 * tile_q;
        prop_assume!(2 * border < tile && overlap < tile);
        let dims = [dims[0].max(tile), dims[1].max(tile), dims[2].max(tile)];
        let grid = plan_tiles(dims, tile, overlap, border).unwrap();
        prop_assert!(grid.coverage().iter().all(|&c| c >= 1));
        let v = Volume::raw(random_array(dims, seed), [0.5; 3]).unwrap();
        let mut tiles: Vec<_> = grid.origins.iter().map(|&o| (o, extract(&v, o, tile).unwrap())).collect();
        let forward = stitch(&tiles, &grid).unwrap();
        prop_assert_eq!(forward.data(), v.data());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        for i in (1..tiles.len()).rev() {
            tiles.swap(i, rng.random_range(0..=i));
        }
        let shuffled = stitch(&tiles, &grid).unwrap();
        prop_assert_eq!(shuffled.data(), forward.data());
    }

    #[test]
    fn psnr_matches_direct_formula(n in 2usize..200, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f32> = (0..n).map(|_| rng.random_range(0.01f32..5.0)).collect();
        let t: Vec<f32> = r.iter().map(|v| v + rng.random_range(-1.0f32..1.0)).collect();
        let peak = r.iter().cloned().fold(0.0f32, f32::max) as f64;
        let mse = r.iter().zip(&t).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>() / n as f64;
        let direct = 10.0 * (peak * peak / mse).log10();
        let got = psnr(&ndarray::Array1::from(r), &ndarray::Array1::from(t)).unwrap();
        prop_assert!((got - direct).abs() < 1e-9);
    }

    #[test]
    fn gaussian_fit_recovers_sigma(
        sy in 1.0f64..6.0,
        sx in 1.0f64..6.0,
        dy in -0.5f64..0.5,
        dx in -0.5f64..0.5,
        amp in 0.5f64..5.0,
        offset in 0.0f64..1.0,
    ) {
        let side = 33;
        let c = (side / 2) as f64;
        let img = Array2::from_shape_fn((side, side), |(y, x)| {
            let (yy, xx) = (y as f64 - c - dy, x as f64 - c - dx);
            amp * (-(yy * yy) / (2.0 * sy * sy) - (xx * xx) / (2.0 * sx * sx)).exp() + offset
        });
        let f = fit_gaussian_2d(&img.view()).unwrap();
        prop_assert!((f.sigma[0] - sy).abs() < 1e-3, "σy {} vs {}", f.sigma[0], sy);
        prop_assert!((f.sigma[1] - sx).abs() < 1e-3, "σx {} vs {}", f.sigma[1], sx);
        prop_assert!((f.fwhm[0] / f.sigma[0] - fwhm_from_sigma(1.0)).abs() < 1e-9);
    }

    #[test]
    fn projection_dominates_each_slice(dims in small_dims(), seed in any::<u64>(), axis in 0usize..3) {
        let v = Volume::raw(random_array(dims, seed), [1.0; 3]).unwrap();
        let p = mip(&v, axis, 0, dims[axis]).unwrap();
        for i in 0..dims[axis] {
            let s = v.data().index_axis(ndarray::Axis(axis), i);
            prop_assert!(ndarray::Zip::from(&p).and(&s).all(|&m, &x| m >= x));
        }
    }

    #[test]
    fn band_profiles_ignore_constant_offsets(h in 2usize..24, w in 2usize..24, seed in any::<u64>(), c in -20i32..20) {
        // Quarter-step values keep sums exact under the shift.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Array2::from_shape_fn((h, w), |_| rng.random_range(0..64) as f32 / 4.0);
        let a = fourier_profile(&img);
        let b = fourier_profile(&img.mapv(|v| v + c as f32));
        for k in 1..a.rows.len() {
            prop_assert!((a.rows[k] - b.rows[k]).abs() < 1e-9);
        }
        for k in 1..a.cols.len() {
            prop_assert!((a.cols[k] - b.cols[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn least_squares_losses_match_per_pixel_sums(seed in any::<u64>(), real in 0.5f64..1.0, fake in -0.5f64..0.4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut map = || Tensor::from_vec([1, 2, 1, 5, 5], (0..50).map(|_| rng.random_range(-2.0f32..2.0)).collect());
        let (r, f) = (map(), map());
        let w = LossWeights { lambda_cyc: 10.0, gan_real_label: real, gan_fake_label: fake };
        let mean_sq = |t: &Tensor, l: f64| t.data().iter().map(|&s| (s as f64 - l).powi(2)).sum::<f64>() / t.len() as f64;
        let (d, _, _) = d_loss_scores(&r, &f, &w);
        prop_assert!((d - (mean_sq(&r, real) + mean_sq(&f, fake))).abs() < 1e-6);
        let (g, _) = g_loss_scores(&f, &w);
        prop_assert!((g - mean_sq(&f, real)).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tiff_round_trip_is_bitwise(dims in small_dims(), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::raw(random_array(dims, seed), [1.5, 0.5, 0.25]).unwrap();
        for name in ["v.tif", "v.raw"] {
            let p = dir.path().join(name);
            save_volume(&v, &p).unwrap();
            let back = load_volume(&p, None).unwrap();
            prop_assert_eq!(back.data(), v.data());
            prop_assert_eq!(back.voxel_size(), v.voxel_size());
        }
    }

    #[test]
    fn bead_phantoms_are_in_bounds_and_deterministic(seed in any::<u64>(), count in 1usize..25) {
        let spec = BeadSpec::new([24, 28, 32], 0.5, count, 0.25);
        let a = make_beads(&spec, seed).unwrap();
        let b = make_beads(&spec, seed).unwrap();
        prop_assert_eq!(a.volume.data(), b.volume.data());
        let extent = a.volume.extent();
        for o in &a.objects {
            let PhantomObject::Bead(bead) = o else { unreachable!() };
            prop_assert!(bead.amplitude > 0.0);
            for ax in 0..3 {
                prop_assert!(bead.center_um[ax] >= 0.0 && bead.center_um[ax] <= extent[ax]);
            }
        }
    }

    #[test]
    fn blur_conserves_total_intensity(seed in any::<u64>(), sz in 0.5f64..2.5, sy in 0.3f64..1.5) {
        let v = Volume::raw(random_array([16, 18, 20], seed), [0.5; 3]).unwrap();
        let before: f64 = v.data().iter().map(|&x| x as f64).sum();
        let after: f64 = blur(&v, [sz, sy, sy], 3.0).unwrap().sum();
        prop_assert!(((after - before) / before).abs() < 1e-4);
    }
}
