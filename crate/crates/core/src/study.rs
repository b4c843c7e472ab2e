//! The bead restoration study: one seeded phantom carried through every
//! pipeline command, with the pass/fail checks applied to its evaluation.
//!
//! Three scales share the protocol. `Full` is the 256³ run with ≥ 5000
//! iterations; `Smoke` is the reduced 128³ variant; `Desk` is a 64³ run that
//! finishes in minutes on one CPU core and is what the test suite exercises
//! by default.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::{NamedPath, PhantomKind, RunConfig};
use crate::error::{Error, Result};
use crate::nn::{BundleConfig, DiscriminatorConfig, GeneratorConfig};
use crate::pipeline::{self, EvaluationReport, VolumeEvaluation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyScale {
    Desk,
    Smoke,
    Full,
}

impl FromStr for StudyScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(StudyScale::Desk),
            "smoke" => Ok(StudyScale::Smoke),
            "full" => Ok(StudyScale::Full),
            other => Err(Error::Config(format!("unknown study scale `{other}` (desk, smoke, full)"))),
        }
    }
}

impl fmt::Display for StudyScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudyScale::Desk => "desk",
            StudyScale::Smoke => "smoke",
            StudyScale::Full => "full",
        })
    }
}

/// Run configuration for the study at `scale`, writing under `output_dir`.
///
/// Input paths between commands are filled in by [`run_study`].
pub fn study_config(scale: StudyScale, output_dir: &Path, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        output_dir: output_dir.to_path_buf(),
        ..RunConfig::default()
    };
    let (n, beads, iterations, crop, g, f, d): (usize, usize, u64, usize, usize, usize, usize) = match scale {
        StudyScale::Desk => (64, 60, 1500, 32, 8, 8, 8),
        StudyScale::Smoke => (128, 120, 2000, 64, 16, 16, 16),
        StudyScale::Full => (256, 400, 5000, 128, 16, 32, 32),
    };
    let p = &mut cfg.phantom;
    p.kind = PhantomKind::Beads;
    p.dims = [n; 3];
    p.count = beads;
    p.min_separation_um = Some(5.0);
    p.margin_um = Some(2.0);
    p.degradation.seed = seed;
    p.reference_sigma_um = p.degradation.psf_sigma_um[2];

    let t = &mut cfg.train.config;
    t.iterations = iterations;
    t.crop = crop;
    t.lr = if scale == StudyScale::Full { 1e-4 } else { 5e-4 };
    t.checkpoint_every = 0;
    t.model = BundleConfig {
        g: GeneratorConfig::unet(g),
        f: GeneratorConfig::dlg(f),
        d: DiscriminatorConfig::with_channels(vec![d, 2 * d, 4 * d, 8 * d]),
    };
    cfg.train.report_every = 100;

    let r = &mut cfg.restore;
    if n < r.tile {
        r.tile = n;
        r.overlap = n / 4;
        r.border_crop = n / 8;
    }
    cfg.evaluate.roi_margin = (n / 8).min(cfg.evaluate.roi_margin);
    cfg
}

/// Outcome of one study run.
#[derive(Debug, Clone)]
pub struct StudyResult {
    pub report: EvaluationReport,
    /// SHA-256 of the training loss log.
    pub loss_log_sha: String,
    /// SHA-256 of the restored volume (and its sidecar).
    pub restored_sha: String,
    pub dir: PathBuf,
}

impl StudyResult {
    pub fn degraded(&self) -> Result<&VolumeEvaluation> {
        self.get(DEGRADED)
    }

    pub fn restored(&self) -> Result<&VolumeEvaluation> {
        self.get(RESTORED)
    }

    fn get(&self, label: &str) -> Result<&VolumeEvaluation> {
        self.report
            .get(label)
            .ok_or_else(|| Error::invalid(format!("evaluation has no `{label}` entry")))
    }
}

pub const DEGRADED: &str = "degraded";
pub const RESTORED: &str = "restored";

/// Runs phantom, preprocess, train, restore and evaluate in sequence.
///
/// Evaluation compares against the isotropic reference, detects spots on it,
/// and measures the degraded and restored volumes at those same spots.
pub fn run_study(base: &RunConfig) -> Result<StudyResult> {
    let mut cfg = base.clone();
    let phantom = pipeline::cmd_phantom(&cfg)?;
    cfg.preprocess.input = Some(phantom.file("degraded")?.to_path_buf());
    let pre = pipeline::cmd_preprocess(&cfg)?;
    let normalized = pre.file("volume")?.to_path_buf();
    cfg.train.inputs = vec![normalized.clone()];
    let train = pipeline::cmd_train(&cfg)?;
    cfg.restore.input = Some(normalized);
    cfg.restore.checkpoint = Some(train.file("checkpoint")?.to_path_buf());
    let restore = pipeline::cmd_restore(&cfg)?;
    let reference = phantom.file("reference")?.to_path_buf();
    cfg.evaluate.reference = Some(reference.clone());
    cfg.evaluate.spots_from = Some(reference);
    cfg.evaluate.volumes = vec![
        NamedPath {
            label: DEGRADED.into(),
            path: phantom.file("degraded")?.to_path_buf(),
        },
        NamedPath {
            label: RESTORED.into(),
            path: restore.file("volume")?.to_path_buf(),
        },
    ];
    let (_, report) = pipeline::cmd_evaluate(&cfg)?;
    Ok(StudyResult {
        report,
        loss_log_sha: pipeline::hash_file(train.file("loss_log")?)?,
        restored_sha: pipeline::hash_file(restore.file("volume")?)?,
        dir: cfg.output_dir,
    })
}

/// One pass/fail line of the study checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn fwhm(e: &VolumeEvaluation) -> Option<(f64, f64)> {
    Some((e.axial.as_ref()?.mean_um, e.lateral.as_ref()?.mean_um))
}

/// Resolution, PSNR, lateral-preservation and spectral checks on a study.
pub fn study_checks(r: &StudyResult) -> Result<Vec<Check>> {
    let deg = r.degraded()?;
    let res = r.restored()?;
    let mut out = Vec::new();
    match (fwhm(deg), fwhm(res)) {
        (Some((da, dl)), Some((ra, rl))) => {
            let pre = da / dl;
            let post = ra / rl;
            let lat = (rl - dl).abs() / dl;
            out.push(Check {
                name: "restoration",
                passed: pre >= 1.8 && post <= 1.3 && lat <= 0.10,
                detail: format!(
                    "axial/lateral {pre:.3} -> {post:.3} (need >= 1.8, <= 1.3); lateral {dl:.3} -> {rl:.3} um, change {:.1}% (need <= 10%)",
                    100.0 * lat
                ),
            });
        }
        _ => out.push(Check {
            name: "restoration",
            passed: false,
            detail: "no spots could be fitted".into(),
        }),
    }
    let gain = res.psnr_axial_db - deg.psnr_axial_db;
    out.push(Check {
        name: "psnr_gain",
        passed: gain >= 1.0 && r.report.axial_rois.len() >= 20,
        detail: format!(
            "axial PSNR {:.2} -> {:.2} dB, gain {gain:+.2} dB over {} slices (need >= +1.0 dB)",
            deg.psnr_axial_db,
            res.psnr_axial_db,
            r.report.axial_rois.len()
        ),
    });
    out.push(Check {
        name: "lateral_psnr",
        passed: res.psnr_lateral_db >= deg.psnr_lateral_db - 0.5,
        detail: format!(
            "lateral PSNR {:.2} -> {:.2} dB (need drop <= 0.5 dB)",
            deg.psnr_lateral_db, res.psnr_lateral_db
        ),
    });
    out.push(Check {
        name: "spectrum",
        passed: res.spectral_distance < deg.spectral_distance,
        detail: format!(
            "band-profile distance to lateral reference {:.4} -> {:.4} (need decrease)",
            deg.spectral_distance, res.spectral_distance
        ),
    });
    Ok(out)
}
