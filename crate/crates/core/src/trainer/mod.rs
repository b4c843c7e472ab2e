//! Single-volume cycle-consistent adversarial training.
//!
//! Each iteration draws one crop `y` of the measured (anisotropic) volume
//! and performs, in order:
//!
//! 1. `x̂ = G(y)`;
//! 2. an update of the three isotropic-domain critics, each comparing the
//!    xy slices of `y` with the xy, xz or yz slices of `x̂`;
//! 3. `ŷ = F(x̂)` and an update of the three measured-domain critics,
//!    comparing matching planes of `y` and `ŷ`;
//! 4. a joint update of `G` and `F` on the adversarial terms plus
//!    `λ · mean|ŷ - y|`. The adversarial term of `F` treats `x̂` as a
//!    constant, so it reaches `F` only.

mod augment;
mod loss;

pub use augment::{dice, flip, rotated_crop, sample_crop, Augment};
pub use loss::{
    cycle_loss, d_loss_scores, g_loss_scores, l1_with_grad, lsgan_d_loss, lsgan_g_loss,
    plane_batch, plane_unbatch, squared_error, LossWeights,
};

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::bundle::COMPONENTS;
use crate::nn::{volume_tensor, Adam, AdamConfig, Archive, BundleConfig, GenCache, Grads, ModelBundle, Tensor, Want};
use crate::volume::{IntensityDomain, Plane, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub crop: usize,
    pub iterations: u64,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub seed: u64,
    pub augment: Augment,
    /// Write a checkpoint every this many iterations; 0 disables
    /// intermediate checkpoints.
    pub checkpoint_every: u64,
    pub batch: usize,
    pub model: BundleConfig,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            crop: 144,
            iterations: 5000,
            lr: 1e-4,
            adam_betas: (0.5, 0.999),
            seed: 0,
            augment: Augment::default(),
            checkpoint_every: 500,
            batch: 1,
            model: BundleConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop % 4 != 0 {
            return Err(Error::Config(format!(
                "crop {} must be a positive multiple of 4",
                self.crop
            )));
        }
        if self.batch != 1 {
            return Err(Error::Config(format!("batch must be 1, got {}", self.batch)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Config(format!("Adam betas {:?} outside [0, 1)", self.adam_betas)));
        }
        self.weights.validate()?;
        self.model.g.validate()?;
        self.model.f.validate()?;
        self.model.d.validate()?;
        let min = self.model.d.min_input();
        if self.crop < min {
            return Err(Error::Config(format!(
                "crop {} is below the discriminator footprint {min}",
                self.crop
            )));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: 1e-8,
        }
    }
}

/// Losses of one iteration. Per-plane entries follow [`Plane::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    /// Sum over planes of the generator loss of `G` against the isotropic critics.
    pub adv_g: f64,
    /// Sum over planes of the generator loss of `F` against the measured critics.
    pub adv_f: f64,
    pub d_x: [f64; 3],
    pub d_y: [f64; 3],
    /// Unweighted mean absolute cycle error.
    pub cyc: f64,
}

impl LossRecord {
    pub const HEADER: &'static str =
        "iteration\tadv_G\tadv_F\tD_X_xy\tD_X_xz\tD_X_yz\tD_Y_xy\tD_Y_xz\tD_Y_yz\tcyc";

    pub fn values(&self) -> [f64; 9] {
        [
            self.adv_g, self.adv_f, self.d_x[0], self.d_x[1], self.d_x[2], self.d_y[0], self.d_y[1],
            self.d_y[2], self.cyc,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// One tab-separated row. Floats use the shortest exact representation.
    pub fn to_row(&self) -> String {
        let mut s = self.iteration.to_string();
        for v in self.values() {
            s.push('\t');
            s.push_str(&format!("{v:?}"));
        }
        s
    }
}

/// Counts of 2D slices shown to each critic family during one step.
///
/// The real xy batch of the isotropic critics is shared by all three and
/// counted once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceAudit {
    pub d_x_real: usize,
    pub d_x_fake: usize,
    pub d_y_real: usize,
    pub d_y_fake: usize,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub iteration: u64,
    pub bundle: ModelBundle,
    /// One optimizer per component, in [`COMPONENTS`] order.
    pub optimizers: Vec<Adam>,
    pub loss_log: Vec<LossRecord>,
    pub last_audit: SliceAudit,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let bundle = ModelBundle::new(config.model.clone(), config.seed)?;
        let adam = config.adam();
        let optimizers = bundle.stores().iter().map(|ps| Adam::new(ps, adam)).collect();
        Ok(TrainState {
            config,
            iteration: 0,
            bundle,
            optimizers,
            loss_log: Vec::new(),
            last_audit: SliceAudit::default(),
        })
    }

    /// Random stream for the crop of a given iteration; independent of
    /// how many iterations ran in this process.
    pub fn crop_rng(&self, iteration: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(iteration + 1);
        rng
    }

    pub fn to_archive(&self) -> Archive {
        let meta = serde_json::json!({
            "kind": "isocycle-training-state",
            "model": self.config.model,
            "train": self.config,
            "iteration": self.iteration,
            "adam_steps": self.optimizers.iter().map(|o| o.step).collect::<Vec<_>>(),
            "loss_log": self.loss_log,
        });
        let mut a = Archive::new(meta);
        self.bundle.export(&mut a);
        for ((name, ps), opt) in COMPONENTS.iter().zip(self.bundle.stores()).zip(&self.optimizers) {
            a.push_like(&format!("adam_m/{name}"), ps, &opt.m);
            a.push_like(&format!("adam_v/{name}"), ps, &opt.v);
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let field = |k: &str| {
            a.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::format(format!("checkpoint metadata lacks '{k}'")))
        };
        let config: TrainConfig = serde_json::from_value(field("train")?)?;
        let iteration: u64 = serde_json::from_value(field("iteration")?)?;
        let steps: Vec<u64> = serde_json::from_value(field("adam_steps")?)?;
        let loss_log: Vec<LossRecord> = serde_json::from_value(field("loss_log")?)?;
        let bundle = ModelBundle::import(config.model.clone(), a)?;
        let adam = config.adam();
        let mut optimizers = Vec::with_capacity(COMPONENTS.len());
        for ((name, ps), step) in COMPONENTS.iter().zip(bundle.stores()).zip(steps) {
            let mut o = Adam::new(ps, adam);
            o.step = step;
            o.m = a.read_like(&format!("adam_m/{name}"), ps)?;
            o.v = a.read_like(&format!("adam_v/{name}"), ps)?;
            optimizers.push(o);
        }
        if optimizers.len() != COMPONENTS.len() {
            return Err(Error::format("checkpoint has the wrong number of optimizer states"));
        }
        Ok(TrainState {
            config,
            iteration,
            bundle,
            optimizers,
            loss_log,
            last_audit: SliceAudit::default(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::read(path)?)
    }

    /// Order-sensitive checksums of every component's parameters.
    pub fn checksums(&self) -> [u64; 8] {
        self.bundle.stores().map(|ps| ps.checksum())
    }
}

fn finite_or_abort(rec: &LossRecord) -> Result<()> {
    if rec.is_finite() {
        Ok(())
    } else {
        Err(Error::numerical(format!(
            "non-finite loss at iteration {}: {}",
            rec.iteration,
            rec.to_row()
        )))
    }
}

/// Updates one critic on a real and a fake batch; returns its loss.
fn critic_update(
    state: &mut TrainState,
    component: usize,
    real: Tensor,
    fake: Tensor,
) -> Result<f64> {
    let w = state.config.weights;
    let d = match component {
        2..=4 => &state.bundle.d_x[component - 2],
        5..=7 => &state.bundle.d_y[component - 5],
        _ => unreachable!("not a critic"),
    };
    let (sr, cr) = d.forward_train(real)?;
    let (sf, cf) = d.forward_train(fake)?;
    let (l, gr, gf) = d_loss_scores(&sr, &sf, &w);
    let mut grads = d.params.zero_grads();
    d.backward(cr, gr, &mut grads, Want::PARAMS);
    d.backward(cf, gf, &mut grads, Want::PARAMS);
    let d = match component {
        2..=4 => &mut state.bundle.d_x[component - 2],
        _ => &mut state.bundle.d_y[component - 5],
    };
    state.optimizers[component].update(&mut d.params, &grads);
    Ok(l)
}

/// Generator-side losses and parameter gradients for one crop.
pub(crate) struct GeneratorGrads {
    pub adv_g: f64,
    pub adv_f: f64,
    pub cyc: f64,
    pub g: Grads,
    pub f: Grads,
    /// Gradient reaching G's output; only the gradient test reads it.
    #[allow(dead_code)]
    pub dxh: Tensor,
}

/// Gradients of `adv_G + λ·cyc` for G and of `adv_F + λ·cyc` for F, given
/// the forward caches of `x̂ = G(y)` and `ŷ = F(x̂)`. F's adversarial term
/// does not reach G.
pub(crate) fn generator_grads(
    b: &ModelBundle,
    y: &Tensor,
    xh: &Tensor,
    g_cache: GenCache,
    yh: &Tensor,
    f_cache: GenCache,
    w: &LossWeights,
) -> Result<GeneratorGrads> {
    let dims = [y.shape()[2], y.shape()[3], y.shape()[4]];
    let mut adv_g = 0.0;
    let mut dxh = Tensor::zeros(xh.shape());
    for (p, plane) in Plane::ALL.iter().enumerate() {
        let (s, c) = b.d_x[p].forward_train(plane_batch(xh, *plane))?;
        let (l, gs) = g_loss_scores(&s, w);
        adv_g += l;
        let mut scratch = b.d_x[p].params.zero_grads();
        let dimg = b.d_x[p].backward(c, gs, &mut scratch, Want::INPUT).expect("input gradient");
        dxh.add_assign(&plane_unbatch(&dimg, *plane, dims));
    }
    let mut adv_f = 0.0;
    let mut dyh_adv = Tensor::zeros(yh.shape());
    for (p, plane) in Plane::ALL.iter().enumerate() {
        let (s, c) = b.d_y[p].forward_train(plane_batch(yh, *plane))?;
        let (l, gs) = g_loss_scores(&s, w);
        adv_f += l;
        let mut scratch = b.d_y[p].params.zero_grads();
        let dimg = b.d_y[p].backward(c, gs, &mut scratch, Want::INPUT).expect("input gradient");
        dyh_adv.add_assign(&plane_unbatch(&dimg, *plane, dims));
    }
    let (cyc, dyh_cyc) = l1_with_grad(yh, y, w.lambda_cyc);

    let mut f_grads = b.f.params.zero_grads();
    let mut dyh_total = dyh_adv;
    dyh_total.add_assign(&dyh_cyc);
    b.f.backward(f_cache.clone(), dyh_total, &mut f_grads, Want::PARAMS);
    let dxh_cyc = b
        .f
        .backward(f_cache, dyh_cyc, &mut f_grads, Want::INPUT)
        .expect("input gradient");
    dxh.add_assign(&dxh_cyc);
    let mut g_grads = b.g.params.zero_grads();
    b.g.backward(g_cache, dxh.clone(), &mut g_grads, Want::PARAMS);
    Ok(GeneratorGrads {
        adv_g,
        adv_f,
        cyc,
        g: g_grads,
        f: f_grads,
        dxh,
    })
}

/// One optimization step on a single normalized crop.
pub fn training_step(state: &mut TrainState, y_crop: &Volume) -> Result<LossRecord> {
    if y_crop.domain() != IntensityDomain::Normalized {
        return Err(Error::invalid("training crops must be normalized"));
    }
    state.bundle.g.check_dims(y_crop.dims())?;
    state.bundle.f.check_dims(y_crop.dims())?;
    let w = state.config.weights;
    let y = volume_tensor(y_crop);
    let mut audit = SliceAudit::default();

    // 1. Super-resolve.
    let (xh, g_cache) = state.bundle.g.forward_train(y.clone());

    // 2. Isotropic-domain critics: real xy slices of y against every plane of x̂.
    let real_xy = plane_batch(&y, Plane::Xy);
    let mut d_x = [0.0; 3];
    audit.d_x_real = real_xy.batch();
    for (p, plane) in Plane::ALL.iter().enumerate() {
        let fake = plane_batch(&xh, *plane);
        audit.d_x_fake += fake.batch();
        d_x[p] = critic_update(state, 2 + p, real_xy.clone(), fake)?;
    }

    // 3. Re-blur and update the measured-domain critics plane by plane.
    let (yh, f_cache) = state.bundle.f.forward_train(xh.clone());
    let mut d_y = [0.0; 3];
    for (p, plane) in Plane::ALL.iter().enumerate() {
        let real = plane_batch(&y, *plane);
        let fake = plane_batch(&yh, *plane);
        audit.d_y_real += real.batch();
        audit.d_y_fake += fake.batch();
        d_y[p] = critic_update(state, 5 + p, real, fake)?;
    }

    // 4. Generators.
    let gen = generator_grads(&state.bundle, &y, &xh, g_cache, &yh, f_cache, &w)?;
    let (adv_g, adv_f, cyc, g_grads, f_grads) = (gen.adv_g, gen.adv_f, gen.cyc, gen.g, gen.f);

    let record = LossRecord {
        iteration: state.iteration + 1,
        adv_g,
        adv_f,
        d_x,
        d_y,
        cyc,
    };
    finite_or_abort(&record)?;
    if !g_grads.all_finite() || !f_grads.all_finite() {
        return Err(Error::numerical(format!(
            "non-finite generator gradient at iteration {}",
            record.iteration
        )));
    }
    state.optimizers[0].update(&mut state.bundle.g.params, &g_grads);
    state.optimizers[1].update(&mut state.bundle.f.params, &f_grads);
    state.iteration += 1;
    state.loss_log.push(record);
    state.last_audit = audit;
    Ok(record)
}

/// Where and how often [`train`] writes artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
    /// Print a progress line every this many iterations (0 = silent).
    pub report_every: u64,
}

pub const LOSS_LOG: &str = "loss_log.tsv";
pub const TIMING_LOG: &str = "timing.tsv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(iteration: u64) -> String {
    format!("iter_{iteration:07}.ckpt")
}

/// Writes the full loss log as tab-separated text.
pub fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    let mut s = String::from(LossRecord::HEADER);
    s.push('\n');
    for r in log {
        s.push_str(&r.to_row());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Runs (or continues) training until `state.config.iterations`.
///
/// Each iteration picks one volume from `volumes` uniformly and samples a
/// crop from it. With an output directory, the loss log is appended row by
/// row, timings go to a separate file so the loss log stays reproducible,
/// and checkpoints are written atomically.
pub fn train(volumes: &[Volume], mut state: TrainState, out: &TrainOutput) -> Result<TrainState> {
    if volumes.is_empty() {
        return Err(Error::invalid("no training volumes"));
    }
    let crop = state.config.crop;
    for v in volumes {
        if v.domain() != IntensityDomain::Normalized {
            return Err(Error::invalid("training volumes must be normalized"));
        }
        if v.dims().iter().any(|&d| d < crop) {
            return Err(Error::invalid(format!(
                "training volume {:?} is smaller than crop {crop}",
                v.dims()
            )));
        }
    }
    let mut log_file = None;
    let mut timing_file = None;
    if let Some(dir) = &out.dir {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("train_config.toml"),
            toml::to_string(&state.config)?,
        )?;
        write_loss_log(&dir.join(LOSS_LOG), &state.loss_log)?;
        log_file = Some(OpenOptions::new().append(true).open(dir.join(LOSS_LOG))?);
        let mut t = OpenOptions::new().create(true).append(true).open(dir.join(TIMING_LOG))?;
        if t.metadata()?.len() == 0 {
            writeln!(t, "iteration\tseconds")?;
        }
        timing_file = Some(t);
        if state.iteration == 0 {
            state.save(&dir.join(checkpoint_name(0)))?;
        }
    }
    let start = Instant::now();
    while state.iteration < state.config.iterations {
        let mut rng = state.crop_rng(state.iteration);
        let vi = if volumes.len() == 1 { 0 } else { rng.random_range(0..volumes.len()) };
        let crop_vol = sample_crop(&volumes[vi], crop, state.config.augment, &mut rng)?;
        let rec = training_step(&mut state, &crop_vol)?;
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", rec.to_row())?;
        }
        if let Some(f) = timing_file.as_mut() {
            writeln!(f, "{}\t{:.3}", rec.iteration, start.elapsed().as_secs_f64())?;
        }
        if out.report_every > 0 && rec.iteration % out.report_every == 0 {
            eprintln!(
                "iter {:>6}  adv_G {:.4}  adv_F {:.4}  cyc {:.4}  {:.1}s",
                rec.iteration,
                rec.adv_g,
                rec.adv_f,
                rec.cyc,
                start.elapsed().as_secs_f64()
            );
        }
        let every = state.config.checkpoint_every;
        if let Some(dir) = &out.dir {
            if every > 0 && state.iteration % every == 0 {
                state.save(&dir.join(checkpoint_name(state.iteration)))?;
            }
        }
    }
    if let Some(dir) = &out.dir {
        state.save(&dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(state)
}
