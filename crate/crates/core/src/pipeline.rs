//! Command implementations shared by the binary and the examples.
//!
//! Every command reads its section of a [`RunConfig`], writes artifacts into
//! `output_dir/<command>/` and finishes with a `manifest.json` holding the
//! resolved configuration, its hash, the seed, the crate version and SHA-256
//! hashes of inputs and outputs. No timestamps are recorded, so reruns of
//! deterministic commands produce byte-identical directories (training
//! wall-clock times live in a separate timing log).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3, Zip};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, PhantomKind, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    self, detect_spots, fwhm_report, mean_profile, patch_side, rl_deconvolve, spectral_distance, FitPlane,
    FwhmReport, SpotSet,
};
use crate::nn::ModelBundle;
use crate::phantom::{
    axial_excess_psf, degrade, gaussian_psf, isotropic_reference, make_beads, make_filaments, BeadSpec,
    FilamentSpec, PhantomObject,
};
use crate::restorer::{restore_volume_with, TileOrder};
use crate::trainer::{self, TrainOutput, TrainState};
use crate::volume::{
    denormalize, load_volume, median_filter, normalize_percentile, resample_isotropic, save_volume, shear_yz,
    sidecar_path, IntensityDomain, NormalizationRecord, Volume,
};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub notes: BTreeMap<String, serde_json::Value>,
}

/// Files produced by a command, keyed by role.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub dir: PathBuf,
    pub files: BTreeMap<String, PathBuf>,
    pub manifest: Manifest,
}

impl CommandOutput {
    pub fn file(&self, key: &str) -> Result<&Path> {
        self.files
            .get(key)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::invalid(format!("command produced no `{key}` output")))
    }
}

/// SHA-256 of a file and, when present, its sidecar.
pub fn hash_file(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    h.update(fs::read(path)?);
    let side = sidecar_path(path);
    if side.exists() {
        h.update(fs::read(side)?);
    }
    Ok(hex(&h.finalize()))
}

struct Recorder {
    command: &'static str,
    dir: PathBuf,
    inputs: BTreeMap<String, String>,
    files: BTreeMap<String, PathBuf>,
    notes: BTreeMap<String, serde_json::Value>,
}

impl Recorder {
    fn new(cfg: &RunConfig, command: &'static str) -> Result<Self> {
        let dir = cfg.output_dir.join(command);
        fs::create_dir_all(&dir)?;
        Ok(Recorder {
            command,
            dir,
            inputs: BTreeMap::new(),
            files: BTreeMap::new(),
            notes: BTreeMap::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("input {} does not exist", path.display()),
            )));
        }
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn save(&mut self, key: &str, name: &str, v: &Volume) -> Result<PathBuf> {
        let p = self.path(name);
        save_volume(v, &p)?;
        self.files.insert(key.to_string(), p.clone());
        Ok(p)
    }

    fn text(&mut self, key: &str, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, text)?;
        self.files.insert(key.to_string(), p.clone());
        Ok(p)
    }

    fn adopt(&mut self, key: &str, path: PathBuf) {
        self.files.insert(key.to_string(), path);
    }

    fn note(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.notes.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    fn finish(self, cfg: &RunConfig) -> Result<CommandOutput> {
        let mut outputs = BTreeMap::new();
        for (k, p) in &self.files {
            if p.is_file() {
                outputs.insert(k.clone(), hash_file(p)?);
            }
        }
        let manifest = Manifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash()?,
            config: cfg.to_toml()?,
            inputs: self.inputs,
            outputs,
            notes: self.notes,
        };
        fs::write(self.dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(CommandOutput {
            dir: self.dir,
            files: self.files,
            manifest,
        })
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("`{what}` is not set")))
}

/// Generates a phantom, its degraded observation and an isotropic reference.
pub fn cmd_phantom(cfg: &RunConfig) -> Result<CommandOutput> {
    let p = &cfg.phantom;
    let mut rec = Recorder::new(cfg, "phantom")?;
    let truth = match p.kind {
        PhantomKind::Beads => {
            let mut spec = BeadSpec::new(p.dims, p.voxel_um, p.count, p.radius_um);
            spec.min_separation_um = p.min_separation_um;
            spec.margin_um = p.margin_um;
            make_beads(&spec, cfg.seed)?
        }
        PhantomKind::Filaments => {
            if p.count == 0 {
                return Err(Error::invalid("filament phantom needs at least one path"));
            }
            make_filaments(&FilamentSpec::new(p.dims, p.voxel_um, p.count, p.radius_um), cfg.seed)?
        }
    };
    let degraded = degrade(&truth, &p.degradation)?;
    let reference = isotropic_reference(&truth.volume, p.reference_sigma_um, p.degradation.truncate)?;
    rec.save("truth", "truth.tif", &truth.volume)?;
    rec.save("degraded", "degraded.tif", &degraded)?;
    rec.save("reference", "reference.tif", &reference)?;
    let objects: Vec<&PhantomObject> = truth.objects.iter().collect();
    rec.text("objects", "objects.json", &(serde_json::to_string_pretty(&objects)? + "\n"))?;
    rec.note("object_count", truth.objects.len())?;
    rec.finish(cfg)
}

/// Median filter, shear, isotropic resampling and percentile normalization,
/// in that order.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<CommandOutput> {
    let p = &cfg.preprocess;
    let input = required(&p.input, "preprocess.input")?;
    let mut rec = Recorder::new(cfg, "preprocess")?;
    rec.input(input)?;
    let mut v = load_volume(input, p.voxel_size)?;
    if v.domain() != IntensityDomain::Raw {
        return Err(Error::invalid("input is already normalized; preprocess expects raw data"));
    }
    if p.median_radius > 0 {
        v = median_filter(&v, p.median_radius)?;
    }
    if let Some(f) = p.shear {
        v = shear_yz(&v, f)?;
    }
    let target = p
        .target_voxel_um
        .unwrap_or_else(|| v.voxel_size().iter().copied().fold(f64::INFINITY, f64::min));
    v = resample_isotropic(&v, target)?;
    let (norm, record) = normalize_percentile(&v, p.low_pct, p.high_pct)?;
    rec.save("volume", "preprocessed.tif", &norm)?;
    rec.text("normalization", "normalization.json", &(serde_json::to_string_pretty(&record)? + "\n"))?;
    rec.note("dims", norm.dims())?;
    rec.note("voxel_um", target)?;
    rec.finish(cfg)
}

pub fn load_normalization(path: &Path) -> Result<NormalizationRecord> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Trains (or resumes) the model on the configured normalized volumes.
pub fn cmd_train(cfg: &RunConfig) -> Result<CommandOutput> {
    let t = &cfg.train;
    if t.inputs.is_empty() {
        return Err(Error::Config("`train.inputs` is empty".into()));
    }
    let tc = cfg.train_config();
    tc.validate()?;
    let mut rec = Recorder::new(cfg, "train")?;
    let mut volumes = Vec::with_capacity(t.inputs.len());
    for p in &t.inputs {
        rec.input(p)?;
        volumes.push(load_volume(p, None)?);
    }
    let state = match &t.resume {
        Some(ck) => {
            rec.input(ck)?;
            let mut s = TrainState::load(ck)?;
            if s.config.model != tc.model || s.config.crop != tc.crop {
                return Err(Error::Config("resume checkpoint does not match the configured model".into()));
            }
            s.config.iterations = tc.iterations;
            s.config.checkpoint_every = tc.checkpoint_every;
            s
        }
        None => TrainState::new(tc)?,
    };
    let out = TrainOutput {
        dir: Some(rec.dir.clone()),
        report_every: t.report_every,
    };
    let state = trainer::train(&volumes, state, &out)?;
    rec.adopt("checkpoint", rec.path(trainer::FINAL_CHECKPOINT));
    rec.adopt("loss_log", rec.path(trainer::LOSS_LOG));
    rec.note("iterations", state.iteration)?;
    rec.note("parameter_counts", state.bundle.parameter_counts())?;
    rec.finish(cfg)
}

/// Applies a trained generator to a normalized volume tile by tile.
pub fn cmd_restore(cfg: &RunConfig) -> Result<CommandOutput> {
    let r = &cfg.restore;
    let input = required(&r.input, "restore.input")?;
    let ckpt = required(&r.checkpoint, "restore.checkpoint")?;
    let mut rec = Recorder::new(cfg, "restore")?;
    rec.input(input)?;
    rec.input(ckpt)?;
    let g = ModelBundle::load_generator(ckpt)?;
    let v = load_volume(input, None)?;
    let mut plan = cfg.inference_plan();
    if let Some(np) = &r.normalization {
        rec.input(np)?;
        plan.normalization = Some(load_normalization(np)?);
    }
    let grid = plan.grid(v.dims())?;
    rec.note("tiles", grid.len())?;
    rec.note("grid_dims", grid.volume_dims)?;
    rec.text("plan", "plan.toml", &grid.to_manifest()?)?;
    let out = restore_volume_with(&g, &v, &plan, TileOrder::Forward, |done, total| {
        eprintln!("tile {done}/{total}");
    })?;
    rec.save("volume", "restored.tif", &out)?;
    if let Some(nr) = &plan.normalization {
        let raw = if out.domain() == IntensityDomain::Normalized {
            denormalize(&out, nr)?
        } else {
            return Err(Error::numerical("restored volume left the normalized range"));
        };
        rec.save("raw", "restored_raw.tif", &raw)?;
    }
    rec.finish(cfg)
}

/// Richardson–Lucy deconvolution of a raw volume.
pub fn cmd_rl(cfg: &RunConfig) -> Result<CommandOutput> {
    let r = &cfg.rl;
    let input = required(&r.input, "rl.input")?;
    let mut rec = Recorder::new(cfg, "rl")?;
    rec.input(input)?;
    let v = load_volume(input, None)?;
    let psf = match (&r.psf, r.psf_sigma_um) {
        (Some(p), _) => {
            rec.input(p)?;
            load_volume(p, Some(v.voxel_size()))?
        }
        (None, Some(sigma)) if r.axial_only => axial_excess_psf(sigma, v.voxel_size(), 3.0)?,
        (None, Some(sigma)) => gaussian_psf(sigma, v.voxel_size(), 3.0)?,
        (None, None) => return Err(Error::Config("set `rl.psf` or `rl.psf_sigma_um`".into())),
    };
    let out = rl_deconvolve(&v, &psf, r.iterations)?;
    rec.save("volume", "rl.tif", &out)?;
    rec.note("iterations", r.iterations)?;
    rec.finish(cfg)
}

/// Least-squares affine intensity match `a·t + b ≈ r` over the whole volume.
pub fn match_affine(test: &Volume, reference: &Volume) -> Result<Array3<f32>> {
    if test.dims() != reference.dims() {
        return Err(Error::invalid(format!(
            "volumes differ in shape: {:?} vs {:?}",
            test.dims(),
            reference.dims()
        )));
    }
    let n = test.len() as f64;
    let (mut st, mut sr, mut stt, mut str_) = (0.0, 0.0, 0.0, 0.0);
    Zip::from(test.data()).and(reference.data()).for_each(|&t, &r| {
        let (t, r) = (t as f64, r as f64);
        st += t;
        sr += r;
        stt += t * t;
        str_ += t * r;
    });
    let var = stt - st * st / n;
    let a = if var > 0.0 { (str_ - st * sr / n) / var } else { 0.0 };
    let b = (sr - a * st) / n;
    Ok(test.data().mapv(|t| (a * t as f64 + b) as f32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FwhmSummary {
    pub count: usize,
    pub failed: usize,
    pub mean_um: f64,
    pub median_um: f64,
    pub std_um: f64,
}

impl From<&FwhmReport> for FwhmSummary {
    fn from(r: &FwhmReport) -> Self {
        FwhmSummary {
            count: r.count(),
            failed: r.failed.len(),
            mean_um: r.mean_um,
            median_um: r.median_um,
            std_um: r.std_um,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeEvaluation {
    pub label: String,
    pub lateral: Option<FwhmSummary>,
    pub axial: Option<FwhmSummary>,
    /// Mean PSNR over the axial (xz) ROI slices, after affine intensity matching.
    pub psnr_axial_db: f64,
    /// Mean PSNR over lateral (xy) ROI slices, after affine intensity matching.
    pub psnr_lateral_db: f64,
    /// Band-profile distance between this volume's xz slices and the
    /// reference's xy slices, after the same intensity matching.
    pub spectral_distance: f64,
}

impl VolumeEvaluation {
    /// Axial over lateral mean FWHM.
    pub fn anisotropy(&self) -> Option<f64> {
        Some(self.axial.as_ref()?.mean_um / self.lateral.as_ref()?.mean_um)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub spots: Vec<[usize; 3]>,
    pub axial_rois: Vec<usize>,
    pub lateral_rois: Vec<usize>,
    pub volumes: Vec<VolumeEvaluation>,
}

impl EvaluationReport {
    pub fn get(&self, label: &str) -> Option<&VolumeEvaluation> {
        self.volumes.iter().find(|v| v.label == label)
    }
}

/// Everything [`evaluate_volumes`] needs, independent of files.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub threshold_rel: f64,
    pub min_separation_vox: f64,
    pub expected_fwhm_vox: f64,
    pub roi_slices: usize,
    pub roi_margin: usize,
}

impl From<&crate::config::EvaluateSection> for EvalOptions {
    fn from(e: &crate::config::EvaluateSection) -> Self {
        EvalOptions {
            threshold_rel: e.threshold_rel,
            min_separation_vox: e.min_separation_vox,
            expected_fwhm_vox: e.expected_fwhm_vox,
            roi_slices: e.roi_slices,
            roi_margin: e.roi_margin,
        }
    }
}

/// Per-volume FWHM reports kept alongside the summary for table output.
pub struct EvaluationDetail {
    pub report: EvaluationReport,
    pub fits: Vec<(String, Option<FwhmReport>, Option<FwhmReport>)>,
}

/// Measures every labelled volume against `reference` at spots detected on
/// `spot_source`.
pub fn evaluate_volumes(
    reference: &Volume,
    spot_source: &Volume,
    volumes: &[(String, Volume)],
    opt: &EvalOptions,
) -> Result<EvaluationDetail> {
    let (_, max) = spot_source.min_max();
    let spots = detect_spots(spot_source, (opt.threshold_rel * max as f64) as f32, opt.min_separation_vox);
    let dims = reference.dims();
    let axial_rois = metrics::roi_slices(dims[1], opt.roi_slices, opt.roi_margin);
    let lateral_rois = metrics::roi_slices(dims[0], opt.roi_slices, opt.roi_margin);
    if axial_rois.is_empty() || lateral_rois.is_empty() {
        return Err(Error::invalid("volume too small for the requested ROI margin"));
    }
    let ref_lateral = mean_profile(&metrics::lateral_slices(reference, &lateral_rois))?;
    let patch = patch_side(opt.expected_fwhm_vox);
    let mut out = Vec::new();
    let mut fits = Vec::new();
    for (label, v) in volumes {
        let spots_here = SpotSet::from_positions(v, spots.positions.clone())?;
        let (lat, ax) = if spots_here.is_empty() {
            (None, None)
        } else {
            (
                fwhm_report(v, &spots_here, FitPlane::Lateral, patch).ok(),
                fwhm_report(v, &spots_here, FitPlane::Axial, patch).ok(),
            )
        };
        let matched = v.with_data(match_affine(v, reference)?, IntensityDomain::Raw)?;
        let psnr_axial_db = metrics::mean_slice_psnr(reference, &matched, 1, &axial_rois)?;
        let psnr_lateral_db = metrics::mean_slice_psnr(reference, &matched, 0, &lateral_rois)?;
        let prof = mean_profile(&metrics::axial_slices(&matched, &axial_rois))?;
        let spectral = spectral_distance(&prof, &ref_lateral)?;
        out.push(VolumeEvaluation {
            label: label.clone(),
            lateral: lat.as_ref().map(FwhmSummary::from),
            axial: ax.as_ref().map(FwhmSummary::from),
            psnr_axial_db,
            psnr_lateral_db,
            spectral_distance: spectral,
        });
        fits.push((label.clone(), lat, ax));
    }
    Ok(EvaluationDetail {
        report: EvaluationReport {
            spots: spots.positions,
            axial_rois,
            lateral_rois,
            volumes: out,
        },
        fits,
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

/// Writes FWHM, PSNR and spectral tables (and optionally plots) for a set of
/// volumes measured at shared spot locations.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(CommandOutput, EvaluationReport)> {
    let e = &cfg.evaluate;
    let ref_path = required(&e.reference, "evaluate.reference")?;
    if e.volumes.is_empty() {
        return Err(Error::Config("`evaluate.volumes` is empty".into()));
    }
    let mut rec = Recorder::new(cfg, "evaluate")?;
    rec.input(ref_path)?;
    let reference = load_volume(ref_path, None)?;
    let spot_source = match &e.spots_from {
        Some(p) => {
            rec.input(p)?;
            load_volume(p, None)?
        }
        None => reference.clone(),
    };
    let mut volumes = Vec::new();
    for np in &e.volumes {
        rec.input(&np.path)?;
        volumes.push((np.label.clone(), load_volume(&np.path, None)?));
    }
    let detail = evaluate_volumes(&reference, &spot_source, &volumes, &EvalOptions::from(e))?;
    let report = &detail.report;

    let mut rows = Vec::new();
    for v in &report.volumes {
        for (plane, s) in [("lateral", &v.lateral), ("axial", &v.axial)] {
            rows.push(vec![
                v.label.clone(),
                plane.to_string(),
                s.as_ref().map_or(0, |s| s.count).to_string(),
                s.as_ref().map_or(0, |s| s.failed).to_string(),
                opt_cell(s.as_ref().map(|s| s.mean_um)),
                opt_cell(s.as_ref().map(|s| s.median_um)),
                opt_cell(s.as_ref().map(|s| s.std_um)),
            ]);
        }
    }
    let p = rec.path("fwhm_summary.tsv");
    metrics::report::write_tsv(&p, &["volume", "plane", "fitted", "failed", "mean_um", "median_um", "std_um"], &rows)?;
    rec.adopt("fwhm_summary", p);

    let psnr_rows: Vec<Vec<String>> = report
        .volumes
        .iter()
        .map(|v| {
            vec![
                v.label.clone(),
                format!("{:.6}", v.psnr_axial_db),
                format!("{:.6}", v.psnr_lateral_db),
                format!("{:.6}", v.spectral_distance),
                opt_cell(v.anisotropy()),
            ]
        })
        .collect();
    let p = rec.path("psnr.tsv");
    metrics::report::write_tsv(
        &p,
        &["volume", "psnr_axial_db", "psnr_lateral_db", "spectral_distance", "axial_over_lateral"],
        &psnr_rows,
    )?;
    rec.adopt("psnr", p);

    let mut spot_rows = Vec::new();
    for (label, lat, ax) in &detail.fits {
        for r in [lat, ax].into_iter().flatten() {
            for f in &r.fits {
                spot_rows.push(vec![
                    label.clone(),
                    r.plane.name().to_string(),
                    format!("{:?}", f.position),
                    format!("{:.6}", f.fit.fwhm[0]),
                    format!("{:.6}", f.fit.fwhm[1]),
                    format!("{:.6}", f.fwhm_um),
                    format!("{:.3e}", f.fit.residual_rms),
                ]);
            }
        }
    }
    let p = rec.path("spot_fits.tsv");
    metrics::report::write_tsv(
        &p,
        &["volume", "plane", "position_zyx", "fwhm0_vox", "fwhm1_vox", "fwhm_um", "residual_rms"],
        &spot_rows,
    )?;
    rec.adopt("spot_fits", p);
    rec.note("spot_count", report.spots.len())?;
    if report.spots.is_empty() {
        rec.note("warning", "zero spots detected; FWHM statistics are unavailable")?;
    }

    if e.plots {
        write_plots(&rec, &detail, &reference, &volumes)?;
    }
    let report = report.clone();
    rec.text("report", "report.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok((rec.finish(cfg)?, report))
}

fn write_plots(rec: &Recorder, detail: &EvaluationDetail, reference: &Volume, volumes: &[(String, Volume)]) -> Result<()> {
    use metrics::report::{plot_histograms, plot_image, plot_lines};
    let hist: Vec<(&str, Vec<f64>)> = detail
        .fits
        .iter()
        .filter_map(|(l, _, ax)| ax.as_ref().map(|r| (l.as_str(), r.fits.iter().map(|f| f.fwhm_um).collect())))
        .collect();
    if !hist.is_empty() {
        plot_histograms(&rec.path("axial_fwhm_hist.svg"), "axial FWHM", "um", &hist, 20)?;
    }
    // Axial line profile through the brightest detected spot.
    if let Some(&p) = detail.report.spots.first() {
        let nz = reference.dims()[0];
        let series: Vec<(&str, Vec<(f64, f64)>)> = volumes
            .iter()
            .map(|(l, v)| {
                let col: Vec<(f64, f64)> = (0..nz)
                    .map(|z| (z as f64 * v.voxel_size()[0], v.data()[[z, p[1], p[2]]] as f64))
                    .collect();
                (l.as_str(), col)
            })
            .collect();
        plot_lines(&rec.path("axial_profile.svg"), "axial profile through brightest spot", "z (um)", &series)?;
    }
    for (label, v) in volumes {
        let y = v.dims()[1] / 2;
        let img: Array2<f32> = v.data().slice(s![.., y, ..]).to_owned();
        let spec = metrics::fourier_profile(&img);
        plot_image(&rec.path(&format!("spectrum_xz_{label}.svg")), &spec.log_magnitude, 128)?;
    }
    let rows = &detail.report.lateral_rois;
    let refp = mean_profile(&metrics::lateral_slices(reference, rows))?;
    let mut series = vec![("reference xy", refp.rows.iter().enumerate().map(|(k, &v)| (k as f64, v)).collect())];
    for (label, v) in volumes {
        let matched = v.with_data(match_affine(v, reference)?, IntensityDomain::Raw)?;
        let p = mean_profile(&metrics::axial_slices(&matched, &detail.report.axial_rois))?;
        series.push((label.as_str(), p.rows.iter().enumerate().map(|(k, &v)| (k as f64, v)).collect()));
    }
    plot_lines(&rec.path("band_profiles.svg"), "row-band log magnitude", "band", &series)?;
    Ok(())
}
