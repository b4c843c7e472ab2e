//! The single run configuration file: one section per command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::DEFAULT_ITERATIONS;
use crate::phantom::DegradationModel;
use crate::restorer::InferencePlan;
use crate::trainer::TrainConfig;
use crate::volume::VoxelSize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Beads,
    Filaments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub kind: PhantomKind,
    pub dims: [usize; 3],
    pub voxel_um: f64,
    /// Beads: number of beads. Filaments: number of paths.
    pub count: usize,
    pub radius_um: f64,
    pub min_separation_um: Option<f64>,
    pub margin_um: Option<f64>,
    pub degradation: DegradationModel,
    /// Isotropic blur (µm) of the evaluation reference derived from the truth.
    pub reference_sigma_um: f64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        PhantomSection {
            kind: PhantomKind::Beads,
            dims: [128, 128, 128],
            voxel_um: 0.5,
            count: 100,
            radius_um: 0.25,
            min_separation_um: None,
            margin_um: None,
            degradation: DegradationModel::default(),
            reference_sigma_um: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    pub input: Option<PathBuf>,
    /// Overrides the input's sidecar voxel size.
    pub voxel_size: Option<VoxelSize>,
    /// Lateral median filter radius in pixels; 0 disables it.
    pub median_radius: usize,
    /// Y–Z shear factor; absent disables it.
    pub shear: Option<f64>,
    /// Target isotropic voxel (µm); the finest input axis when absent.
    pub target_voxel_um: Option<f64>,
    pub low_pct: f64,
    pub high_pct: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self::cfm()
    }
}

impl PreprocessSection {
    /// Confocal settings: 0.03 % saturation each side, no filtering or shear.
    pub fn cfm() -> Self {
        PreprocessSection {
            input: None,
            voxel_size: None,
            median_radius: 0,
            shear: None,
            target_voxel_um: None,
            low_pct: 0.03,
            high_pct: 99.97,
        }
    }

    /// Light-sheet settings: radius-2 median, the given shear, 3 % saturation.
    pub fn lsm(shear: f64) -> Self {
        PreprocessSection {
            median_radius: 2,
            shear: Some(shear),
            low_pct: 3.0,
            high_pct: 97.0,
            ..Self::cfm()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSection {
    /// Normalized training volumes.
    pub inputs: Vec<PathBuf>,
    /// Continue from this checkpoint instead of starting fresh.
    pub resume: Option<PathBuf>,
    pub report_every: u64,
    #[serde(flatten)]
    pub config: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            inputs: Vec::new(),
            resume: None,
            report_every: 100,
            config: TrainConfig::default(),
        }
    }
}

// The section's own keys are taken out first; the remainder must parse as a
// `TrainConfig`, which rejects unknown keys.
impl<'de> Deserialize<'de> for TrainSection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut table = toml::Table::deserialize(d)?;
        let mut out = TrainSection::default();
        if let Some(v) = table.remove("inputs") {
            out.inputs = v.try_into().map_err(D::Error::custom)?;
        }
        if let Some(v) = table.remove("resume") {
            out.resume = Some(v.try_into().map_err(D::Error::custom)?);
        }
        if let Some(v) = table.remove("report_every") {
            out.report_every = v.try_into().map_err(D::Error::custom)?;
        }
        out.config = toml::Value::Table(table).try_into().map_err(D::Error::custom)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RestoreSection {
    pub input: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Normalization record written by `preprocess`, for the raw-scale output.
    pub normalization: Option<PathBuf>,
    pub tile: usize,
    pub overlap: usize,
    pub border_crop: usize,
}

impl Default for RestoreSection {
    fn default() -> Self {
        let p = InferencePlan::default();
        RestoreSection {
            input: None,
            checkpoint: None,
            normalization: None,
            tile: p.tile,
            overlap: p.overlap,
            border_crop: p.border_crop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Ground-truth (or reference) volume that PSNR and spectra compare against.
    pub reference: Option<PathBuf>,
    /// Volumes to measure, by label.
    pub volumes: Vec<NamedPath>,
    /// Volume on which spots are detected; the reference when absent.
    pub spots_from: Option<PathBuf>,
    /// Detection threshold as a fraction of the detection volume's maximum.
    pub threshold_rel: f64,
    pub min_separation_vox: f64,
    /// Expected FWHM in voxels, used to size fit patches.
    pub expected_fwhm_vox: f64,
    /// Number of axial (xz) slices used for PSNR and spectra.
    pub roi_slices: usize,
    /// Slices skipped at each face when choosing ROIs.
    pub roi_margin: usize,
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPath {
    pub label: String,
    pub path: PathBuf,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            reference: None,
            volumes: Vec::new(),
            spots_from: None,
            threshold_rel: 0.2,
            min_separation_vox: 4.0,
            expected_fwhm_vox: 5.0,
            roi_slices: 20,
            roi_margin: 8,
            plots: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlSection {
    pub input: Option<PathBuf>,
    /// PSF volume file; when absent a Gaussian PSF is built from `psf_sigma_um`.
    pub psf: Option<PathBuf>,
    pub psf_sigma_um: Option<[f64; 3]>,
    /// Deconvolve only the axial excess of `psf_sigma_um` over the lateral width.
    pub axial_only: bool,
    pub iterations: usize,
}

impl Default for RlSection {
    fn default() -> Self {
        RlSection {
            input: None,
            psf: None,
            psf_sigma_um: None,
            axial_only: false,
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub phantom: PhantomSection,
    pub preprocess: PreprocessSection,
    pub train: TrainSection,
    pub restore: RestoreSection,
    pub evaluate: EvaluateSection,
    pub rl: RlSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("run"),
            phantom: PhantomSection::default(),
            preprocess: PreprocessSection::default(),
            train: TrainSection::default(),
            restore: RestoreSection::default(),
            evaluate: EvaluateSection::default(),
            rl: RlSection::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(config_err)
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// SHA-256 of the canonical TOML serialization, as lowercase hex.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.output_dir);
        fix_opt(&mut self.preprocess.input);
        self.train.inputs.iter_mut().for_each(fix);
        fix_opt(&mut self.train.resume);
        fix_opt(&mut self.restore.input);
        fix_opt(&mut self.restore.checkpoint);
        fix_opt(&mut self.restore.normalization);
        fix_opt(&mut self.evaluate.reference);
        fix_opt(&mut self.evaluate.spots_from);
        self.evaluate.volumes.iter_mut().for_each(|n| fix(&mut n.path));
        fix_opt(&mut self.rl.input);
        fix_opt(&mut self.rl.psf);
    }

    /// Applies a `section.key=value` override; the value is parsed as a
    /// TOML value, falling back to a plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` lacks `=`")))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut doc = toml::Value::try_from(&*self).map_err(config_err)?;
        let mut cur = &mut doc;
        let parts: Vec<&str> = key.trim().split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = cur
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{key}` does not name a config table")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            cur = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        *self = doc.try_into().map_err(config_err)?;
        Ok(())
    }

    /// Training configuration with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut c = self.train.config.clone();
        c.seed = self.seed;
        c
    }

    pub fn inference_plan(&self) -> InferencePlan {
        InferencePlan {
            tile: self.restore.tile,
            overlap: self.restore.overlap,
            border_crop: self.restore.border_crop,
            checkpoint: self.restore.checkpoint.clone(),
            normalization: None,
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.hash().unwrap(), back.hash().unwrap());
        assert_eq!(c.hash().unwrap().len(), 64);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[train]\ncropp = 8"), Err(Error::Config(_))));
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::from_toml("seed = 7\n[train]\ncrop = 64\n[rl]\niterations = 3").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.config.crop, 64);
        assert_eq!(c.train.config.iterations, 5000);
        assert_eq!(c.rl.iterations, 3);
        assert_eq!(c.train_config().seed, 7);
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply_override("train.iterations=12").unwrap();
        c.apply_override("phantom.kind=filaments").unwrap();
        c.apply_override("restore.input=/tmp/a.tif").unwrap();
        assert_eq!(c.train.config.iterations, 12);
        assert_eq!(c.phantom.kind, PhantomKind::Filaments);
        assert_eq!(c.restore.input, Some(PathBuf::from("/tmp/a.tif")));
        assert!(c.apply_override("train.nope=1").is_err());
        assert!(c.apply_override("noequals").is_err());
    }

    #[test]
    fn presets() {
        let l = PreprocessSection::lsm(0.5);
        assert_eq!((l.median_radius, l.low_pct, l.high_pct), (2, 3.0, 97.0));
        let c = PreprocessSection::cfm();
        assert_eq!((c.median_radius, c.low_pct, c.high_pct, c.shear), (0, 0.03, 99.97, None));
    }

    #[test]
    fn relative_paths_resolve() {
        let mut c = RunConfig::from_toml("output_dir = \"out\"\n[rl]\ninput = \"v.tif\"").unwrap();
        c.resolve_paths(Path::new("/data"));
        assert_eq!(c.output_dir, PathBuf::from("/data/out"));
        assert_eq!(c.rl.input, Some(PathBuf::from("/data/v.tif")));
    }
}
