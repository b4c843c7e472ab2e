//! Synthetic ground-truth volumes and the forward degradation model.
//!
//! Beads and filaments are rendered with 3x3x3 supersampled occupancy so
//! their partial-volume edges are anti-aliased. The degradation blurs with
//! an anisotropic Gaussian PSF, keeps every k-th axial plane, adds noise
//! and interpolates back onto the isotropic grid.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::separable_convolve;
use crate::volume::preprocess::{resample_axis, AxisTaps};
use crate::volume::{IntensityDomain, Volume};

const SUPERSAMPLE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeadRecord {
    /// `(z, y, x)` centre in µm; voxel `i` sits at `i * voxel`.
    pub center_um: [f64; 3],
    pub radius_um: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilamentRecord {
    pub points_um: Vec<[f64; 3]>,
    pub radius_um: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PhantomObject {
    Bead(BeadRecord),
    Filament(FilamentRecord),
}

/// Ground truth together with the objects that produced it.
#[derive(Debug, Clone)]
pub struct PhantomTruth {
    pub volume: Volume,
    pub objects: Vec<PhantomObject>,
    pub seed: u64,
}

impl PhantomTruth {
    pub fn beads(&self) -> impl Iterator<Item = &BeadRecord> {
        self.objects.iter().filter_map(|o| match o {
            PhantomObject::Bead(b) => Some(b),
            _ => None,
        })
    }

    /// Bead centres in (fractional) voxel coordinates.
    pub fn bead_voxel_centers(&self) -> Vec<[f64; 3]> {
        let vs = self.volume.voxel_size();
        self.beads()
            .map(|b| {
                [
                    b.center_um[0] / vs[0],
                    b.center_um[1] / vs[1],
                    b.center_um[2] / vs[2],
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeadSpec {
    pub dims: [usize; 3],
    /// Isotropic voxel size in µm.
    pub voxel_um: f64,
    pub count: usize,
    pub radius_um: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Minimum centre distance; `4 * radius` when absent.
    #[serde(default)]
    pub min_separation_um: Option<f64>,
    /// Minimum distance from the volume faces; `radius` when absent.
    #[serde(default)]
    pub margin_um: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl BeadSpec {
    pub fn new(dims: [usize; 3], voxel_um: f64, count: usize, radius_um: f64) -> Self {
        BeadSpec {
            dims,
            voxel_um,
            count,
            radius_um,
            amplitude: 1.0,
            min_separation_um: None,
            margin_um: None,
        }
    }
}

fn supersample_offsets() -> [f64; SUPERSAMPLE] {
    let mut o = [0.0; SUPERSAMPLE];
    for (s, v) in o.iter_mut().enumerate() {
        *v = (s as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
    }
    o
}

/// Accumulates a per-voxel bitmask of covered subsamples for every shape.
struct OccupancyCanvas {
    dims: [usize; 3],
    voxel: f64,
    masks: Array3<u32>,
    amplitude: Array3<f32>,
}

impl OccupancyCanvas {
    fn new(dims: [usize; 3], voxel: f64) -> Self {
        OccupancyCanvas {
            dims,
            voxel,
            masks: Array3::zeros(dims),
            amplitude: Array3::zeros(dims),
        }
    }

    /// Marks subsamples inside `inside(p_um)` within the µm bounding box.
    fn paint(
        &mut self,
        lo_um: [f64; 3],
        hi_um: [f64; 3],
        amplitude: f64,
        inside: impl Fn([f64; 3]) -> bool,
    ) {
        let offs = supersample_offsets();
        let mut range = [(0usize, 0usize); 3];
        for a in 0..3 {
            let lo = ((lo_um[a] / self.voxel) - 1.0).floor().max(0.0) as usize;
            let hi = (((hi_um[a] / self.voxel) + 1.0).ceil() as isize)
                .clamp(0, self.dims[a] as isize - 1) as usize;
            range[a] = (lo, hi);
        }
        for z in range[0].0..=range[0].1 {
            for y in range[1].0..=range[1].1 {
                for x in range[2].0..=range[2].1 {
                    let mut bits = 0u32;
                    let mut bit = 0;
                    for oz in offs {
                        for oy in offs {
                            for ox in offs {
                                let p = [
                                    (z as f64 + oz) * self.voxel,
                                    (y as f64 + oy) * self.voxel,
                                    (x as f64 + ox) * self.voxel,
                                ];
                                if inside(p) {
                                    bits |= 1 << bit;
                                }
                                bit += 1;
                            }
                        }
                    }
                    if bits != 0 {
                        self.masks[[z, y, x]] |= bits;
                        let a = &mut self.amplitude[[z, y, x]];
                        *a = a.max(amplitude as f32);
                    }
                }
            }
        }
    }

    fn finish(self) -> Array3<f32> {
        let n = (SUPERSAMPLE * SUPERSAMPLE * SUPERSAMPLE) as f32;
        ndarray::Zip::from(&self.masks)
            .and(&self.amplitude)
            .map_collect(|&m, &a| m.count_ones() as f32 / n * a)
    }
}

/// Renders spheres with anti-aliased occupancy.
pub fn render_beads(dims: [usize; 3], voxel_um: f64, beads: &[BeadRecord]) -> Array3<f32> {
    let mut canvas = OccupancyCanvas::new(dims, voxel_um);
    for b in beads {
        let r = b.radius_um;
        let c = b.center_um;
        let lo = [c[0] - r, c[1] - r, c[2] - r];
        let hi = [c[0] + r, c[1] + r, c[2] + r];
        canvas.paint(lo, hi, b.amplitude, |p| {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            d2 <= r * r
        });
    }
    canvas.finish()
}

fn distance_to_segment(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

/// Renders polylines dilated into tubes; overlapping tubes are unioned.
pub fn render_filaments(
    dims: [usize; 3],
    voxel_um: f64,
    filaments: &[FilamentRecord],
) -> Array3<f32> {
    let mut canvas = OccupancyCanvas::new(dims, voxel_um);
    for f in filaments {
        let r = f.radius_um;
        for seg in f.points_um.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let lo = [a[0].min(b[0]) - r, a[1].min(b[1]) - r, a[2].min(b[2]) - r];
            let hi = [a[0].max(b[0]) + r, a[1].max(b[1]) + r, a[2].max(b[2]) + r];
            canvas.paint(lo, hi, f.amplitude, |p| distance_to_segment(p, a, b) <= r);
        }
    }
    canvas.finish()
}

/// Random non-overlapping beads.
pub fn make_beads(spec: &BeadSpec, seed: u64) -> Result<PhantomTruth> {
    if spec.count == 0 {
        return Err(Error::invalid("bead count must be >= 1"));
    }
    if !(spec.voxel_um > 0.0) {
        return Err(Error::invalid("voxel size must be positive"));
    }
    if spec.radius_um < spec.voxel_um / 2.0 {
        return Err(Error::invalid(format!(
            "bead radius {} µm is below half a voxel ({} µm)",
            spec.radius_um, spec.voxel_um
        )));
    }
    if !(spec.amplitude > 0.0) {
        return Err(Error::invalid("bead amplitude must be positive"));
    }
    let min_sep = spec.min_separation_um.unwrap_or(4.0 * spec.radius_um);
    let margin = spec.margin_um.unwrap_or(spec.radius_um);
    let hi: Vec<f64> = spec
        .dims
        .iter()
        .map(|&d| (d - 1) as f64 * spec.voxel_um - margin)
        .collect();
    if hi.iter().any(|&h| h < margin) {
        return Err(Error::invalid("volume too small for the requested margin"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(spec.count);
    let max_attempts = 1000 * spec.count + 10_000;
    let mut attempts = 0;
    while centers.len() < spec.count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::invalid(format!(
                "placed only {} of {} beads with separation {min_sep} µm",
                centers.len(),
                spec.count
            )));
        }
        let c = [
            rng.random_range(margin..=hi[0]),
            rng.random_range(margin..=hi[1]),
            rng.random_range(margin..=hi[2]),
        ];
        let ok = centers.iter().all(|o| {
            let d2 = (o[0] - c[0]).powi(2) + (o[1] - c[1]).powi(2) + (o[2] - c[2]).powi(2);
            d2 >= min_sep * min_sep
        });
        if ok {
            centers.push(c);
        }
    }
    let beads: Vec<BeadRecord> = centers
        .into_iter()
        .map(|c| BeadRecord {
            center_um: c,
            radius_um: spec.radius_um,
            amplitude: spec.amplitude,
        })
        .collect();
    let data = render_beads(spec.dims, spec.voxel_um, &beads);
    Ok(PhantomTruth {
        volume: Volume::raw(data, [spec.voxel_um; 3])?,
        objects: beads.into_iter().map(PhantomObject::Bead).collect(),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilamentSpec {
    pub dims: [usize; 3],
    pub voxel_um: f64,
    pub paths: usize,
    pub tube_radius_um: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Control points per path.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Distance between control points in µm; 4 voxels when absent.
    #[serde(default)]
    pub step_um: Option<f64>,
    /// Standard deviation of the per-step direction change (radians).
    #[serde(default = "default_bend")]
    pub bend: f64,
}

fn default_points() -> usize {
    24
}

fn default_bend() -> f64 {
    0.25
}

impl FilamentSpec {
    pub fn new(dims: [usize; 3], voxel_um: f64, paths: usize, tube_radius_um: f64) -> Self {
        FilamentSpec {
            dims,
            voxel_um,
            paths,
            tube_radius_um,
            amplitude: 1.0,
            points: default_points(),
            step_um: None,
            bend: default_bend(),
        }
    }
}

/// Smooth random tubes, e.g. dendrite-like test content.
pub fn make_filaments(spec: &FilamentSpec, seed: u64) -> Result<PhantomTruth> {
    if spec.tube_radius_um < spec.voxel_um / 2.0 {
        return Err(Error::invalid(format!(
            "tube radius {} µm is below half a voxel",
            spec.tube_radius_um
        )));
    }
    if spec.points < 2 && spec.paths > 0 {
        return Err(Error::invalid("filaments need at least two control points"));
    }
    let ext: Vec<f64> = spec
        .dims
        .iter()
        .map(|&d| (d - 1) as f64 * spec.voxel_um)
        .collect();
    let step = spec.step_um.unwrap_or(4.0 * spec.voxel_um);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spec.bend.max(1e-12)).expect("valid sigma");
    let mut filaments = Vec::with_capacity(spec.paths);
    for _ in 0..spec.paths {
        let mut p = [
            rng.random_range(0.0..=ext[0]),
            rng.random_range(0.0..=ext[1]),
            rng.random_range(0.0..=ext[2]),
        ];
        let mut dir = random_unit(&mut rng);
        let mut pts = vec![p];
        for _ in 1..spec.points {
            for d in dir.iter_mut() {
                *d += normal.sample(&mut rng);
            }
            dir = normalize3(dir);
            let mut next = [p[0] + step * dir[0], p[1] + step * dir[1], p[2] + step * dir[2]];
            // Reflect off the volume faces.
            for a in 0..3 {
                if next[a] < 0.0 {
                    next[a] = -next[a];
                    dir[a] = -dir[a];
                } else if next[a] > ext[a] {
                    next[a] = 2.0 * ext[a] - next[a];
                    dir[a] = -dir[a];
                }
                next[a] = next[a].clamp(0.0, ext[a]);
            }
            pts.push(next);
            p = next;
        }
        filaments.push(FilamentRecord {
            points_um: pts,
            radius_um: spec.tube_radius_um,
            amplitude: spec.amplitude,
        });
    }
    let data = render_filaments(spec.dims, spec.voxel_um, &filaments);
    Ok(PhantomTruth {
        volume: Volume::raw(data, [spec.voxel_um; 3])?,
        objects: filaments.into_iter().map(PhantomObject::Filament).collect(),
        seed,
    })
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-6 && n2 <= 1.0 {
            return normalize3(v);
        }
    }
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Normalized 1D Gaussian sampled at integer offsets `-h..=h`, with
/// `h = ceil(truncate * sigma)`. `sigma` is in voxels.
pub fn gaussian_kernel_1d(sigma: f64, truncate: f64) -> Vec<f64> {
    let h = (truncate * sigma).ceil().max(0.0) as isize;
    let mut k: Vec<f64> = (-h..=h)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian PSF on the voxel grid, normalized to unit sum.
pub fn gaussian_psf(sigma_um: [f64; 3], voxel_um: [f64; 3], truncate: f64) -> Result<Volume> {
    if sigma_um.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid(format!(
            "PSF sigma must be positive, got {sigma_um:?}"
        )));
    }
    if truncate < 3.0 {
        return Err(Error::invalid("PSF truncation must be >= 3 sigma"));
    }
    let k: Vec<Vec<f64>> = (0..3)
        .map(|a| gaussian_kernel_1d(sigma_um[a] / voxel_um[a], truncate))
        .collect();
    let data = Array3::from_shape_fn((k[0].len(), k[1].len(), k[2].len()), |(z, y, x)| {
        (k[0][z] * k[1][y] * k[2][x]) as f32
    });
    Volume::raw(data, voxel_um)
}

/// The axial-only Gaussian that turns an isotropic blur of
/// `sigma_um[2]` into the anisotropic `sigma_um`; lateral components are
/// a delta. Useful when deconvolving only the axial excess.
pub fn axial_excess_psf(sigma_um: [f64; 3], voxel_um: [f64; 3], truncate: f64) -> Result<Volume> {
    let lateral = sigma_um[1].min(sigma_um[2]);
    let excess = (sigma_um[0].powi(2) - lateral.powi(2)).sqrt();
    if !(excess > 0.0) {
        return Err(Error::invalid("axial sigma must exceed the lateral sigma"));
    }
    let kz = gaussian_kernel_1d(excess / voxel_um[0], truncate);
    let data = Array3::from_shape_fn((kz.len(), 1, 1), |(z, _, _)| kz[z] as f32);
    Volume::raw(data, voxel_um)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Noise {
    None,
    Gaussian { sigma: f64 },
    /// Shot noise: `Poisson(v * scale) / scale`.
    Poisson { scale: f64 },
    /// Shot noise followed by Gaussian read noise.
    PoissonGaussian { scale: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationModel {
    /// `(σz, σy, σx)` in µm.
    pub psf_sigma_um: [f64; 3],
    /// Spacing between retained z-planes in µm.
    pub axial_step_um: f64,
    pub noise: Noise,
    pub seed: u64,
    #[serde(default = "default_truncate")]
    pub truncate: f64,
}

fn default_truncate() -> f64 {
    3.0
}

impl Default for DegradationModel {
    fn default() -> Self {
        DegradationModel {
            psf_sigma_um: [2.0, 1.0, 1.0],
            axial_step_um: 1.0,
            noise: Noise::None,
            seed: 0,
            truncate: default_truncate(),
        }
    }
}

/// Separable Gaussian blur of a volume with reflective boundaries.
pub fn blur(v: &Volume, sigma_um: [f64; 3], truncate: f64) -> Result<Array3<f64>> {
    let vs = v.voxel_size();
    if sigma_um.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("blur sigma must be positive"));
    }
    let k: Vec<Vec<f64>> = (0..3)
        .map(|a| gaussian_kernel_1d(sigma_um[a] / vs[a], truncate))
        .collect();
    let dims = v.dims();
    for a in 0..3 {
        if k[a].len() > 2 * dims[a] + 1 {
            return Err(Error::invalid(format!(
                "PSF of {} taps is larger than the volume along axis {a}",
                k[a].len()
            )));
        }
    }
    let d = v.data().mapv(|x| x as f64);
    Ok(separable_convolve(&d, [&k[0], &k[1], &k[2]]))
}

/// The same truth seen with isotropic resolution `sigma_um` on every axis.
pub fn isotropic_reference(truth: &Volume, sigma_um: f64, truncate: f64) -> Result<Volume> {
    let b = blur(truth, [sigma_um; 3], truncate)?;
    truth.with_data(b.mapv(|x| x as f32), IntensityDomain::Raw)
}

/// Forward model: PSF blur, axial undersampling, noise, and linear
/// interpolation back onto the truth grid.
pub fn degrade(truth: &PhantomTruth, model: &DegradationModel) -> Result<Volume> {
    let v = &truth.volume;
    let vz = v.voxel_size()[0];
    let k_real = model.axial_step_um / vz;
    let k = k_real.round();
    if (k_real - k).abs() > 1e-9 || k < 1.0 {
        return Err(Error::invalid(format!(
            "axial step {} µm is not an integer multiple of the {} µm voxel",
            model.axial_step_um, vz
        )));
    }
    let k = k as usize;
    let blurred = blur(v, model.psf_sigma_um, model.truncate)?;
    let [nz, ny, nx] = v.dims();
    let kept: Vec<usize> = (0..nz).step_by(k).collect();
    let mut sub = Array3::<f32>::zeros((kept.len(), ny, nx));
    for (i, &z) in kept.iter().enumerate() {
        sub.index_axis_mut(ndarray::Axis(0), i)
            .assign(&blurred.index_axis(ndarray::Axis(0), z).mapv(|x| x as f32));
    }
    apply_noise(&mut sub, model.noise, model.seed)?;
    let taps = AxisTaps::from_coords((0..nz).map(|i| i as f64 / k as f64), kept.len());
    let up = resample_axis(&sub, 0, &taps);
    v.with_data(up, IntensityDomain::Raw)
}

fn apply_noise(a: &mut Array3<f32>, noise: Noise, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shot = |a: &mut Array3<f32>, scale: f64, rng: &mut ChaCha8Rng| -> Result<()> {
        if !(scale > 0.0) {
            return Err(Error::invalid("Poisson scale must be positive"));
        }
        for v in a.iter_mut() {
            let lambda = (*v as f64).max(0.0) * scale;
            let counts = if lambda > 0.0 {
                Poisson::new(lambda)
                    .map_err(|e| Error::invalid(e.to_string()))?
                    .sample(rng)
            } else {
                0.0
            };
            *v = (counts / scale) as f32;
        }
        Ok(())
    };
    let read = |a: &mut Array3<f32>, sigma: f64, rng: &mut ChaCha8Rng| -> Result<()> {
        let n = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for v in a.iter_mut() {
            *v += n.sample(rng) as f32;
        }
        Ok(())
    };
    match noise {
        Noise::None => Ok(()),
        Noise::Gaussian { sigma } => read(a, sigma, &mut rng),
        Noise::Poisson { scale } => shot(a, scale, &mut rng),
        Noise::PoissonGaussian { scale, sigma } => {
            shot(a, scale, &mut rng)?;
            read(a, sigma, &mut rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centred_bead_is_isotropic() {
        let dims = [17, 17, 17];
        let bead = BeadRecord {
            center_um: [8.0 * 0.5; 3],
            radius_um: 1.3,
            amplitude: 1.0,
        };
        let d = render_beads(dims, 0.5, &[bead]);
        let max = d.iter().cloned().fold(f32::MIN, f32::max);
        assert_eq!(d[[8, 8, 8]], max);
        for i in 0..17 {
            let axial = d[[i, 8, 8]];
            assert!((axial - d[[8, i, 8]]).abs() < 1e-6);
            assert!((axial - d[[8, 8, i]]).abs() < 1e-6);
        }
    }

    #[test]
    fn beads_are_seed_deterministic() {
        let spec = BeadSpec::new([24; 3], 0.5, 5, 0.5);
        let a = make_beads(&spec, 11).unwrap();
        let b = make_beads(&spec, 11).unwrap();
        assert_eq!(a.volume, b.volume);
        assert_eq!(a.objects, b.objects);
        let c = make_beads(&spec, 12).unwrap();
        assert_ne!(a.objects, c.objects);
    }

    #[test]
    fn impossible_bead_placement_fails() {
        let mut spec = BeadSpec::new([8; 3], 0.5, 50, 0.5);
        spec.min_separation_um = Some(3.0);
        assert!(make_beads(&spec, 1).is_err());
        assert!(make_beads(&BeadSpec::new([8; 3], 0.5, 0, 0.5), 1).is_err());
        assert!(make_beads(&BeadSpec::new([8; 3], 0.5, 1, 0.1), 1).is_err());
    }

    #[test]
    fn zero_filaments_is_empty() {
        let t = make_filaments(&FilamentSpec::new([16; 3], 0.5, 0, 0.5), 3).unwrap();
        assert!(t.volume.data().iter().all(|&v| v == 0.0));
        let spec = FilamentSpec::new([24; 3], 0.5, 3, 0.5);
        let a = make_filaments(&spec, 5).unwrap();
        let b = make_filaments(&spec, 5).unwrap();
        assert_eq!(a.volume, b.volume);
        assert!(a.volume.data().sum() > 0.0);
    }

    #[test]
    fn psf_normalization_and_symmetry() {
        let p = gaussian_psf([1.0; 3], [0.5; 3], 3.0).unwrap();
        let s: f64 = p.data().iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() < 1e-6);
        let d = p.data();
        let n = p.dims()[0];
        assert_eq!(p.dims(), [n, n, n]);
        assert!(n % 2 == 1);
        for ((z, y, x), &v) in d.indexed_iter() {
            assert_eq!(v, d[[y, z, x]]);
            assert_eq!(v, d[[x, y, z]]);
        }
        assert!(gaussian_psf([1.0, 0.0, 1.0], [1.0; 3], 3.0).is_err());
        assert!(gaussian_psf([1.0; 3], [1.0; 3], 2.0).is_err());
    }

    #[test]
    fn identity_degradation() {
        let spec = BeadSpec::new([12; 3], 0.5, 3, 0.5);
        let truth = make_beads(&spec, 2).unwrap();
        let model = DegradationModel {
            psf_sigma_um: [1e-6; 3],
            axial_step_um: 0.5,
            noise: Noise::None,
            seed: 0,
            truncate: 3.0,
        };
        assert_eq!(degrade(&truth, &model).unwrap().data(), truth.volume.data());
    }

    #[test]
    fn blur_conserves_intensity() {
        let spec = BeadSpec::new([32; 3], 0.5, 6, 0.5);
        let truth = make_beads(&spec, 4).unwrap();
        let b = blur(&truth.volume, [2.0, 1.0, 1.0], 3.0).unwrap();
        let s0: f64 = truth.volume.data().iter().map(|&v| v as f64).sum();
        assert!(((b.sum() - s0) / s0).abs() < 1e-4);
    }

    #[test]
    fn non_integer_step_rejected_and_noise_reproducible() {
        let truth = make_beads(&BeadSpec::new([16; 3], 0.5, 2, 0.5), 8).unwrap();
        let mut m = DegradationModel {
            axial_step_um: 0.75,
            ..Default::default()
        };
        assert!(degrade(&truth, &m).is_err());
        m.axial_step_um = 1.0;
        m.noise = Noise::PoissonGaussian {
            scale: 100.0,
            sigma: 0.01,
        };
        m.seed = 77;
        let a = degrade(&truth, &m).unwrap();
        let b = degrade(&truth, &m).unwrap();
        assert_eq!(a, b);
        m.seed = 78;
        assert_ne!(degrade(&truth, &m).unwrap(), a);
    }
}
