//! Generator and discriminator architectures.

use serde::{Deserialize, Serialize};

use super::conv::ConvGeom;
use super::layers::{Builder, Cache, Op, Seq, Want};
use super::params::{seeded_rng, Grads, ParamStore};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::volume::{IntensityDomain, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Unet3d,
    Dlg3d,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    /// Width of the first U-Net level; deeper levels double it.
    pub base_channels: usize,
    /// Number of pooling levels. Only 2 is supported.
    pub depth: usize,
    pub dlg_kernels: Vec<usize>,
    pub dlg_pads: Vec<usize>,
    pub dlg_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            kind: GeneratorKind::Unet3d,
            base_channels: 32,
            depth: 2,
            dlg_kernels: vec![7, 5, 3, 1, 1, 1],
            dlg_pads: vec![3, 2, 1, 0, 0, 0],
            dlg_channels: 64,
        }
    }
}

impl GeneratorConfig {
    pub fn unet(base_channels: usize) -> Self {
        GeneratorConfig {
            base_channels,
            ..Default::default()
        }
    }

    pub fn dlg(channels: usize) -> Self {
        GeneratorConfig {
            kind: GeneratorKind::Dlg3d,
            dlg_channels: channels,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            GeneratorKind::Unet3d => {
                if self.base_channels == 0 {
                    return Err(Error::Config("base_channels must be positive".into()));
                }
                if self.depth != 2 {
                    return Err(Error::Config(format!(
                        "unet3d supports depth 2 only, got {}",
                        self.depth
                    )));
                }
            }
            GeneratorKind::Dlg3d => {
                if self.dlg_kernels.is_empty() || self.dlg_kernels.len() != self.dlg_pads.len() {
                    return Err(Error::Config(format!(
                        "dlg kernel list ({}) and pad list ({}) must be nonempty and of equal length",
                        self.dlg_kernels.len(),
                        self.dlg_pads.len()
                    )));
                }
                for (&k, &p) in self.dlg_kernels.iter().zip(&self.dlg_pads) {
                    if k == 0 || k % 2 == 0 || 2 * p + 1 != k {
                        return Err(Error::Config(format!(
                            "dlg kernel {k} with pad {p} does not preserve shape"
                        )));
                    }
                }
                if self.dlg_channels == 0 {
                    return Err(Error::Config("dlg_channels must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Receptive field of the deep linear generator along one axis.
    pub fn dlg_receptive_field(&self) -> usize {
        1 + self.dlg_kernels.iter().map(|k| k - 1).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct UNet {
    enc1: Seq,
    pool1: Seq,
    enc2: Seq,
    pool2: Seq,
    bott: Seq,
    up2: Seq,
    dec2: Seq,
    up1: Seq,
    dec1: Seq,
    out: Seq,
    c: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Arch {
    Unet(UNet),
    Dlg(Seq),
}

/// Saved activations from a training-mode generator pass.
#[derive(Debug, Clone)]
pub struct GenCache<T = f32> {
    seqs: Vec<Vec<Cache<T>>>,
}

fn conv_block(b: &mut Builder, name: &str, cin: usize, cout: usize, norm: bool, reps: usize) -> Vec<Op> {
    let mut ops = Vec::new();
    let mut c = cin;
    for r in 0..reps {
        ops.push(b.conv(&format!("{name}.conv{r}"), c, cout, ConvGeom::cube(3, 1, 1)));
        if norm {
            ops.push(b.norm(&format!("{name}.norm{r}"), cout));
        }
        ops.push(Op::Relu);
        c = cout;
    }
    ops
}

fn build_unet(b: &mut Builder, c: usize) -> UNet {
    let enc1 = Seq {
        ops: conv_block(b, "enc1", 1, c, true, 2),
    };
    let enc2 = Seq {
        ops: conv_block(b, "enc2", c, 2 * c, true, 2),
    };
    let bott = Seq {
        ops: conv_block(b, "bottleneck", 2 * c, 4 * c, false, 3),
    };
    let up2 = Seq {
        ops: vec![b.up2("up2", 4 * c, 2 * c)],
    };
    let dec2 = Seq {
        ops: conv_block(b, "dec2", 4 * c, 2 * c, true, 2),
    };
    let up1 = Seq {
        ops: vec![b.up2("up1", 2 * c, c)],
    };
    let dec1 = Seq {
        ops: conv_block(b, "dec1", 2 * c, c, true, 2),
    };
    let out = Seq {
        ops: vec![
            b.conv("out.conv0", c, c, ConvGeom::cube(3, 1, 1)),
            b.conv("out.conv1", c, 1, ConvGeom::cube(3, 1, 1)),
            Op::ScaledSigmoid,
        ],
    };
    let pool = Seq {
        ops: vec![Op::MaxPool2],
    };
    UNet {
        enc1,
        pool1: pool.clone(),
        enc2,
        pool2: pool,
        bott,
        up2,
        dec2,
        up1,
        dec1,
        out,
        c,
    }
}

fn cached<T: Real>(seq: &Seq, ps: &ParamStore<T>, x: Tensor<T>, caches: &mut Option<&mut Vec<Vec<Cache<T>>>>) -> Tensor<T> {
    match caches {
        Some(all) => {
            let mut c = Vec::with_capacity(seq.ops.len());
            let y = seq.forward(ps, x, Some(&mut c));
            all.push(c);
            y
        }
        None => seq.forward(ps, x, None),
    }
}

impl UNet {
    fn forward<T: Real>(&self, ps: &ParamStore<T>, x: Tensor<T>, mut caches: Option<&mut Vec<Vec<Cache<T>>>>) -> Tensor<T> {
        let e1 = cached(&self.enc1, ps, x, &mut caches);
        let p1 = cached(&self.pool1, ps, e1.clone(), &mut caches);
        let e2 = cached(&self.enc2, ps, p1, &mut caches);
        let p2 = cached(&self.pool2, ps, e2.clone(), &mut caches);
        let bn = cached(&self.bott, ps, p2, &mut caches);
        let u2 = cached(&self.up2, ps, bn, &mut caches);
        let d2 = cached(&self.dec2, ps, Tensor::concat_channels(&u2, &e2), &mut caches);
        drop(e2);
        let u1 = cached(&self.up1, ps, d2, &mut caches);
        let d1 = cached(&self.dec1, ps, Tensor::concat_channels(&u1, &e1), &mut caches);
        drop(e1);
        cached(&self.out, ps, d1, &mut caches)
    }

    fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        mut caches: Vec<Vec<Cache<T>>>,
        dy: Tensor<T>,
        grads: &mut Grads<T>,
        want: Want,
    ) -> Option<Tensor<T>> {
        let inner = Want {
            params: want.params,
            input: true,
        };
        let mut pop = || caches.pop().expect("unet cache");
        let d = self.out.backward(ps, pop(), dy, grads, inner)?;
        let dcat1 = self.dec1.backward(ps, pop(), d, grads, inner)?;
        let (du1, mut dskip1) = dcat1.split_channels(self.c);
        let d = self.up1.backward(ps, pop(), du1, grads, inner)?;
        let dcat2 = self.dec2.backward(ps, pop(), d, grads, inner)?;
        let (du2, mut dskip2) = dcat2.split_channels(2 * self.c);
        let d = self.up2.backward(ps, pop(), du2, grads, inner)?;
        let d = self.bott.backward(ps, pop(), d, grads, inner)?;
        let d = self.pool2.backward(ps, pop(), d, grads, inner)?;
        dskip2.add_assign(&d);
        let d = self.enc2.backward(ps, pop(), dskip2, grads, inner)?;
        let d = self.pool1.backward(ps, pop(), d, grads, inner)?;
        dskip1.add_assign(&d);
        self.enc1.backward(ps, pop(), dskip1, grads, want)
    }
}

/// A 3D generator operating on single-channel volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T = f32> {
    pub config: GeneratorConfig,
    pub params: ParamStore<T>,
    arch: Arch,
}

impl Generator {
    /// Builds and Kaiming-initializes a generator. Identical seeds give
    /// identical parameters.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut b = Builder {
            ps: &mut ps,
            rng: &mut rng,
            prefix: config_prefix(&config).into(),
        };
        let arch = match config.kind {
            GeneratorKind::Unet3d => Arch::Unet(build_unet(&mut b, config.base_channels)),
            GeneratorKind::Dlg3d => {
                let n = config.dlg_kernels.len();
                let mut ops = Vec::with_capacity(n);
                for (i, (&k, &p)) in config.dlg_kernels.iter().zip(&config.dlg_pads).enumerate() {
                    let cin = if i == 0 { 1 } else { config.dlg_channels };
                    let cout = if i + 1 == n { 1 } else { config.dlg_channels };
                    ops.push(b.conv(&format!("layer{i}"), cin, cout, ConvGeom::cube(k, 1, p)));
                }
                Arch::Dlg(Seq { ops })
            }
        };
        Ok(Generator {
            config,
            params: ps,
            arch,
        })
    }

    /// Applies the generator to a normalized volume.
    pub fn apply(&self, v: &Volume) -> Result<Volume> {
        if v.domain() != IntensityDomain::Normalized {
            return Err(Error::invalid("generator input must be normalized"));
        }
        let dims = v.dims();
        self.check_dims(dims)?;
        let x = volume_tensor(v);
        let y = self.forward(x);
        let data = ndarray::Array3::from_shape_vec(dims, y.into_vec())
            .map_err(|e| Error::invalid(e.to_string()))?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("generator produced non-finite values"));
        }
        let domain = if data.iter().all(|v| (-1.0..=1.0).contains(v)) {
            IntensityDomain::Normalized
        } else {
            IntensityDomain::Raw
        };
        v.with_data(data, domain)
    }
}

impl<T: Real> Generator<T> {
    /// The same network with parameters converted to another element type.
    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            config: self.config.clone(),
            params: self.params.cast(),
            arch: self.arch.clone(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Checks that a `(z, y, x)` shape can pass through the network.
    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("empty volume"));
        }
        if self.config.kind == GeneratorKind::Unet3d && dims.iter().any(|d| d % 4 != 0) {
            return Err(Error::invalid(format!(
                "unet3d needs every dimension divisible by 4, got {dims:?}"
            )));
        }
        Ok(())
    }

    /// Inference on a `[1, N, D, H, W]` tensor.
    pub fn forward(&self, x: Tensor<T>) -> Tensor<T> {
        match &self.arch {
            Arch::Unet(u) => u.forward(&self.params, x, None),
            Arch::Dlg(s) => s.forward(&self.params, x, None),
        }
    }

    /// Forward pass keeping activations for [`Generator::backward`].
    pub fn forward_train(&self, x: Tensor<T>) -> (Tensor<T>, GenCache<T>) {
        let mut seqs = Vec::new();
        let y = match &self.arch {
            Arch::Unet(u) => u.forward(&self.params, x, Some(&mut seqs)),
            Arch::Dlg(s) => {
                let mut c = Vec::new();
                let y = s.forward(&self.params, x, Some(&mut c));
                seqs.push(c);
                y
            }
        };
        (y, GenCache { seqs })
    }

    pub fn backward(&self, cache: GenCache<T>, dy: Tensor<T>, grads: &mut Grads<T>, want: Want) -> Option<Tensor<T>> {
        match &self.arch {
            Arch::Unet(u) => u.backward(&self.params, cache.seqs, dy, grads, want),
            Arch::Dlg(s) => {
                let mut seqs = cache.seqs;
                s.backward(&self.params, seqs.pop().expect("dlg cache"), dy, grads, want)
            }
        }
    }

}

fn config_prefix(c: &GeneratorConfig) -> &'static str {
    match c.kind {
        GeneratorKind::Unet3d => "unet",
        GeneratorKind::Dlg3d => "dlg",
    }
}

/// Wraps a volume as a `[1, 1, D, H, W]` tensor.
pub fn volume_tensor(v: &Volume) -> Tensor {
    let [d, h, w] = v.dims();
    let data = v.data().as_standard_layout().iter().copied().collect();
    Tensor::from_vec([1, 1, d, h, w], data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub leaky_slope: f32,
    /// Output width of each downsampling block; its length is the block count.
    pub channels: Vec<usize>,
    pub final_kernel: usize,
    pub final_stride: usize,
    pub final_pad: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            kernel: 4,
            stride: 2,
            pad: 1,
            leaky_slope: 0.2,
            channels: vec![64, 128, 256, 512],
            final_kernel: 4,
            final_stride: 1,
            final_pad: 1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn with_channels(channels: Vec<usize>) -> Self {
        DiscriminatorConfig {
            channels,
            ..Default::default()
        }
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::Config("discriminator needs at least one block of positive width".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky slope {} outside (0, 1)",
                self.leaky_slope
            )));
        }
        if self.kernel == 0 || self.stride == 0 || self.final_kernel == 0 || self.final_stride == 0 {
            return Err(Error::Config("kernel and stride must be positive".into()));
        }
        Ok(())
    }

    /// Score-map side for an input side `n`, or `None` if too small.
    pub fn output_size(&self, n: usize) -> Option<usize> {
        let step = |n: usize, k: usize, s: usize, p: usize| -> Option<usize> {
            (n + 2 * p >= k).then(|| (n + 2 * p - k) / s + 1)
        };
        let mut m = n;
        for _ in 0..self.blocks() {
            m = step(m, self.kernel, self.stride, self.pad)?;
        }
        step(m, self.final_kernel, self.final_stride, self.final_pad)
    }

    /// Smallest input side producing a nonempty score map.
    pub fn min_input(&self) -> usize {
        (1..).find(|&n| self.output_size(n).is_some()).expect("finite footprint")
    }
}

/// A 2D patch discriminator applied to batches of single-channel images.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamStore,
    net: Seq,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut b = Builder {
            ps: &mut ps,
            rng: &mut rng,
            prefix: "patch".into(),
        };
        let mut ops = Vec::new();
        let mut cin = 1;
        for (i, &c) in config.channels.iter().enumerate() {
            ops.push(b.conv(
                &format!("block{i}.conv"),
                cin,
                c,
                ConvGeom::planar(config.kernel, config.stride, config.pad),
            ));
            ops.push(b.norm(&format!("block{i}.norm"), c));
            ops.push(Op::LeakyRelu(config.leaky_slope));
            cin = c;
        }
        ops.push(b.conv(
            "final.conv",
            cin,
            1,
            ConvGeom::planar(config.final_kernel, config.final_stride, config.final_pad),
        ));
        Ok(Discriminator {
            config,
            params: ps,
            net: Seq { ops },
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Score-map shape for `h x w` images.
    pub fn output_shape(&self, h: usize, w: usize) -> Result<[usize; 2]> {
        match (self.config.output_size(h), self.config.output_size(w)) {
            (Some(a), Some(b)) => Ok([a, b]),
            _ => Err(Error::invalid(format!(
                "image {h}x{w} is smaller than the discriminator footprint (minimum side {})",
                self.config.min_input()
            ))),
        }
    }

    /// Scores a `[1, N, 1, H, W]` image batch, giving `[1, N, 1, h, w]`.
    pub fn forward(&self, x: Tensor) -> Result<Tensor> {
        self.check_input(&x)?;
        Ok(self.net.forward(&self.params, x, None))
    }

    pub fn forward_train(&self, x: Tensor) -> Result<(Tensor, Vec<Cache>)> {
        self.check_input(&x)?;
        let mut cache = Vec::new();
        let y = self.net.forward(&self.params, x, Some(&mut cache));
        Ok((y, cache))
    }

    pub fn backward(&self, cache: Vec<Cache>, dy: Tensor, grads: &mut Grads, want: Want) -> Option<Tensor> {
        self.net.backward(&self.params, cache, dy, grads, want)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [c, _, d, h, w] = x.shape();
        if c != 1 || d != 1 {
            return Err(Error::invalid(format!(
                "discriminator expects a single-channel 2D batch, got shape {:?}",
                x.shape()
            )));
        }
        self.output_shape(h, w).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_normalized(n: [usize; 3], seed: u64) -> Volume {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Volume::normalized(Array3::from_shape_fn(n, |_| r.random_range(-1.0..1.0)), [1.0; 3]).unwrap()
    }

    #[test]
    fn unet_preserves_shape_and_range() {
        let g = Generator::new(GeneratorConfig::unet(2), 0).unwrap();
        let out = g.apply(&random_normalized([8, 12, 16], 1)).unwrap();
        assert_eq!(out.dims(), [8, 12, 16]);
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(g.apply(&random_normalized([8, 10, 8], 1)).is_err());
    }

    #[test]
    fn dlg_shape_and_receptive_field() {
        let cfg = GeneratorConfig::dlg(4);
        assert_eq!(cfg.dlg_receptive_field(), 13);
        let g = Generator::new(cfg, 3).unwrap();
        assert_eq!(g.apply(&random_normalized([5, 7, 9], 2)).unwrap().dims(), [5, 7, 9]);
    }

    #[test]
    fn invalid_generator_configs() {
        let mut c = GeneratorConfig::dlg(4);
        c.dlg_pads.pop();
        assert!(Generator::new(c, 0).is_err());
        let mut c = GeneratorConfig::dlg(4);
        c.dlg_kernels[0] = 4;
        assert!(Generator::new(c, 0).is_err());
    }

    #[test]
    fn seeds_determine_parameters() {
        let a = Generator::new(GeneratorConfig::unet(2), 9).unwrap();
        let b = Generator::new(GeneratorConfig::unet(2), 9).unwrap();
        let c = Generator::new(GeneratorConfig::unet(2), 10).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn discriminator_map_sizes() {
        let cfg = DiscriminatorConfig::default();
        assert_eq!(cfg.output_size(132), Some(7));
        assert_eq!(cfg.output_size(64), Some(3));
        assert_eq!(cfg.min_input(), 32);
        let d = Discriminator::new(DiscriminatorConfig::with_channels(vec![2, 2, 2, 2]), 0).unwrap();
        let y = d.forward(Tensor::zeros([1, 3, 1, 48, 64])).unwrap();
        assert_eq!(y.shape(), [1, 3, 1, 2, 3]);
        assert!(d.forward(Tensor::zeros([1, 1, 1, 31, 40])).is_err());
    }

    /// Central differences on the sum of outputs of a frozen 8³ U-Net, run
    /// in double precision so rounding stays far below the tolerance.
    #[test]
    fn unet_parameter_gradients_match_finite_differences() {
        let g = Generator::new(GeneratorConfig::unet(2), 4).unwrap().cast::<f64>();
        let v = random_normalized([8, 8, 8], 5);
        let x: Tensor<f64> = Tensor::from_vec([1, 1, 8, 8, 8], v.data().iter().map(|&a| a as f64).collect());
        let objective = |g: &Generator<f64>| -> f64 { g.forward(x.clone()).data().iter().sum() };
        let (_, cache) = g.forward_train(x.clone());
        let mut grads = g.params.zero_grads();
        g.backward(cache, Tensor::filled(x.shape(), 1.0), &mut grads, Want::PARAMS);

        let mut r = ChaCha8Rng::seed_from_u64(7);
        let eps = 1e-6;
        let (mut checked, mut worst) = (0, 0.0f64);
        while checked < 120 {
            let i = r.random_range(0..grads.0.len());
            let j = r.random_range(0..grads.0[i].len());
            let analytic = grads.0[i][j];
            // Biases feeding a normalization have an exactly zero gradient.
            if analytic.abs() < 1e-6 {
                continue;
            }
            let shifted = |s: f64| {
                let mut h = g.clone();
                h.params.values_mut(i)[j] += s;
                objective(&h)
            };
            let numeric = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            assert!(rel < 1e-3, "{}[{j}]: analytic {analytic}, numeric {numeric}", g.params.name(i));
            worst = worst.max(rel);
            checked += 1;
        }
        assert!(worst < 1e-3);
    }
}
