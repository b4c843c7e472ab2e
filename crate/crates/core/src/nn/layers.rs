//! Layer operations with explicit forward caches and backward passes.

use rand_chacha::ChaCha8Rng;

use super::conv::{conv_backward, conv_forward, convt2_backward, convt2_forward, ConvGeom};
use super::params::{kaiming_normal, Grads, ParamId, ParamStore};
use super::real::Real;
use super::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Conv {
        w: ParamId,
        b: ParamId,
        cout: usize,
        geom: ConvGeom,
    },
    /// Transposed convolution, kernel 2, stride 2.
    Up2 { w: ParamId, b: ParamId, cout: usize },
    /// Per-sample, per-channel normalization over spatial axes with affine
    /// scale and shift.
    InstanceNorm { gamma: ParamId, beta: ParamId },
    Relu,
    LeakyRelu(f32),
    /// 2x2x2 max pooling with stride 2.
    MaxPool2,
    /// `2 * sigmoid(x) - 1`, mapping onto `(-1, 1)`.
    ScaledSigmoid,
}

/// Values saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub enum Cache<T = f32> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Norm { xhat: Tensor<T>, inv_std: Vec<T> },
    Pool { argmax: Vec<u8>, input_shape: [usize; 5] },
}

/// What a backward pass should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Want {
    pub params: bool,
    pub input: bool,
}

impl Want {
    pub const ALL: Want = Want {
        params: true,
        input: true,
    };
    pub const PARAMS: Want = Want {
        params: true,
        input: false,
    };
    pub const INPUT: Want = Want {
        params: false,
        input: true,
    };
}

fn instance_norm_forward<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let s = x.spatial_len();
    let n = x.batch();
    let mut xhat = x.clone();
    let mut y = Tensor::zeros(x.shape());
    let mut inv = Vec::with_capacity(x.channels() * n);
    for (blk, (src, (h, out))) in x
        .data()
        .chunks(s)
        .zip(xhat.data_mut().chunks_mut(s).zip(y.data_mut().chunks_mut(s)))
        .enumerate()
    {
        let c = blk / n;
        let mean = src.iter().map(|&v| v.as_f64()).sum::<f64>() / s as f64;
        let var = src.iter().map(|&v| (v.as_f64() - mean).powi(2)).sum::<f64>() / s as f64;
        let is = T::cast(1.0 / (var + NORM_EPS).sqrt());
        let m = T::cast(mean);
        for ((hv, o), &v) in h.iter_mut().zip(out.iter_mut()).zip(src) {
            *hv = (v - m) * is;
            *o = gamma[c] * *hv + beta[c];
        }
        inv.push(is);
    }
    (y, xhat, inv)
}

fn instance_norm_backward<T: Real>(
    dy: &Tensor<T>,
    xhat: &Tensor<T>,
    inv: &[T],
    gamma: &[T],
    mut dgamma: Option<&mut [T]>,
    mut dbeta: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Tensor<T>> {
    let s = dy.spatial_len();
    let n = dy.batch();
    let mut dx = want_dx.then(|| Tensor::zeros(dy.shape()));
    for (blk, (g, h)) in dy.data().chunks(s).zip(xhat.data().chunks(s)).enumerate() {
        let c = blk / n;
        let sum_g: f64 = g.iter().map(|&v| v.as_f64()).sum();
        let sum_gh: f64 = g.iter().zip(h).map(|(&a, &b)| (a * b).as_f64()).sum();
        if let Some(dg) = dgamma.as_deref_mut() {
            dg[c] += T::cast(sum_gh);
        }
        if let Some(db) = dbeta.as_deref_mut() {
            db[c] += T::cast(sum_g);
        }
        if let Some(dx) = dx.as_mut() {
            let mg = T::cast(sum_g / s as f64);
            let mgh = T::cast(sum_gh / s as f64);
            let k = gamma[c] * inv[blk];
            let out = &mut dx.data_mut()[blk * s..(blk + 1) * s];
            for ((o, &gv), &hv) in out.iter_mut().zip(g).zip(h) {
                *o = k * (gv - mg - hv * mgh);
            }
        }
    }
    dx
}

fn maxpool2_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u8>) {
    let [c, n, d, h, w] = x.shape();
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let mut out = Tensor::zeros([c, n, od, oh, ow]);
    let mut arg = vec![0u8; out.len()];
    let src = x.data();
    let dst = out.data_mut();
    let mut o = 0;
    for cn in 0..c * n {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut bi = 0u8;
                    for sub in 0..8u8 {
                        let (a, b, cc) = ((sub >> 2) as usize, ((sub >> 1) & 1) as usize, (sub & 1) as usize);
                        let v = src[((cn * d + 2 * z + a) * h + 2 * y + b) * w + 2 * xx + cc];
                        if v > best || sub == 0 {
                            best = v;
                            bi = sub;
                        }
                    }
                    dst[o] = best;
                    arg[o] = bi;
                    o += 1;
                }
            }
        }
    }
    (out, arg)
}

fn maxpool2_backward<T: Real>(dy: &Tensor<T>, arg: &[u8], input_shape: [usize; 5]) -> Tensor<T> {
    let [c, n, d, h, w] = input_shape;
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let mut dx = Tensor::zeros(input_shape);
    let g = dy.data();
    let dst = dx.data_mut();
    let mut o = 0;
    for cn in 0..c * n {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let sub = arg[o];
                    let (a, b, cc) = ((sub >> 2) as usize, ((sub >> 1) & 1) as usize, (sub & 1) as usize);
                    dst[((cn * d + 2 * z + a) * h + 2 * y + b) * w + 2 * xx + cc] += g[o];
                    o += 1;
                }
            }
        }
    }
    dx
}

impl Op {
    /// Forward pass; pushes a cache entry when `cache` is given.
    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, x: Tensor<T>, cache: Option<&mut Vec<Cache<T>>>) -> Tensor<T> {
        match *self {
            Op::Conv { w, b, cout, geom } => {
                let y = conv_forward(&x, ps.get(w), Some(ps.get(b)), cout, geom);
                if let Some(c) = cache {
                    c.push(Cache::Input(x));
                }
                y
            }
            Op::Up2 { w, b, cout } => {
                let y = convt2_forward(&x, ps.get(w), Some(ps.get(b)), cout);
                if let Some(c) = cache {
                    c.push(Cache::Input(x));
                }
                y
            }
            Op::InstanceNorm { gamma, beta } => {
                let (y, xhat, inv_std) = instance_norm_forward(&x, ps.get(gamma), ps.get(beta));
                if let Some(c) = cache {
                    c.push(Cache::Norm { xhat, inv_std });
                }
                y
            }
            Op::Relu => {
                let mut y = x;
                y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
                if let Some(c) = cache {
                    c.push(Cache::Output(y.clone()));
                }
                y
            }
            Op::LeakyRelu(slope) => {
                let slope = T::cast(slope as f64);
                let y = x.map(|v| if v > T::zero() { v } else { slope * v });
                if let Some(c) = cache {
                    c.push(Cache::Input(x));
                }
                y
            }
            Op::MaxPool2 => {
                let shape = x.shape();
                let (y, argmax) = maxpool2_forward(&x);
                if let Some(c) = cache {
                    c.push(Cache::Pool {
                        argmax,
                        input_shape: shape,
                    });
                }
                y
            }
            Op::ScaledSigmoid => {
                let y = x.map(|v| T::cast(2.0) / (T::one() + (-v).exp()) - T::one());
                if let Some(c) = cache {
                    c.push(Cache::Output(y.clone()));
                }
                y
            }
        }
    }

    /// Backward pass. Parameter gradients accumulate into `grads`.
    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        cache: Cache<T>,
        dy: Tensor<T>,
        grads: &mut Grads<T>,
        want: Want,
    ) -> Option<Tensor<T>> {
        match (self, cache) {
            (&Op::Conv { w, b, cout, geom }, Cache::Input(x)) => {
                if want.params {
                    let mut dw = std::mem::take(&mut grads.0[w.0]);
                    let dx = conv_backward(
                        &x,
                        ps.get(w),
                        cout,
                        geom,
                        &dy,
                        Some(&mut dw),
                        Some(grads.get_mut(b)),
                        want.input,
                    );
                    grads.0[w.0] = dw;
                    dx
                } else {
                    conv_backward(&x, ps.get(w), cout, geom, &dy, None, None, want.input)
                }
            }
            (&Op::Up2 { w, b, cout }, Cache::Input(x)) => {
                if want.params {
                    let mut dw = std::mem::take(&mut grads.0[w.0]);
                    let dx = convt2_backward(
                        &x,
                        ps.get(w),
                        cout,
                        &dy,
                        Some(&mut dw),
                        Some(grads.get_mut(b)),
                        want.input,
                    );
                    grads.0[w.0] = dw;
                    dx
                } else {
                    convt2_backward(&x, ps.get(w), cout, &dy, None, None, want.input)
                }
            }
            (&Op::InstanceNorm { gamma, beta }, Cache::Norm { xhat, inv_std }) => {
                if want.params {
                    let mut dg = std::mem::take(&mut grads.0[gamma.0]);
                    let dx = instance_norm_backward(
                        &dy,
                        &xhat,
                        &inv_std,
                        ps.get(gamma),
                        Some(&mut dg),
                        Some(grads.get_mut(beta)),
                        want.input,
                    );
                    grads.0[gamma.0] = dg;
                    dx
                } else {
                    instance_norm_backward(&dy, &xhat, &inv_std, ps.get(gamma), None, None, want.input)
                }
            }
            (Op::Relu, Cache::Output(y)) => {
                let mut d = dy;
                for (g, &v) in d.data_mut().iter_mut().zip(y.data()) {
                    if v <= T::zero() {
                        *g = T::zero();
                    }
                }
                Some(d)
            }
            (&Op::LeakyRelu(slope), Cache::Input(x)) => {
                let slope = T::cast(slope as f64);
                let mut d = dy;
                for (g, &v) in d.data_mut().iter_mut().zip(x.data()) {
                    if v <= T::zero() {
                        *g *= slope;
                    }
                }
                Some(d)
            }
            (Op::MaxPool2, Cache::Pool { argmax, input_shape }) => {
                Some(maxpool2_backward(&dy, &argmax, input_shape))
            }
            (Op::ScaledSigmoid, Cache::Output(y)) => {
                let mut d = dy;
                for (g, &v) in d.data_mut().iter_mut().zip(y.data()) {
                    *g *= T::cast(0.5) * (T::one() - v * v);
                }
                Some(d)
            }
            (op, _) => panic!("cache does not belong to {op:?}"),
        }
    }
}

/// A straight chain of operations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Seq {
    pub ops: Vec<Op>,
}

impl Seq {
    pub fn forward<T: Real>(&self, ps: &ParamStore<T>, x: Tensor<T>, mut cache: Option<&mut Vec<Cache<T>>>) -> Tensor<T> {
        let mut cur = x;
        for op in &self.ops {
            cur = op.forward(ps, cur, cache.as_deref_mut());
        }
        cur
    }

    /// Consumes the caches produced by [`Seq::forward`] in reverse order.
    pub fn backward<T: Real>(
        &self,
        ps: &ParamStore<T>,
        mut cache: Vec<Cache<T>>,
        dy: Tensor<T>,
        grads: &mut Grads<T>,
        want: Want,
    ) -> Option<Tensor<T>> {
        assert_eq!(cache.len(), self.ops.len(), "cache length mismatch");
        let mut d = dy;
        for (i, op) in self.ops.iter().enumerate().rev() {
            let c = cache.pop().expect("cache entry");
            let w = Want {
                params: want.params,
                input: want.input || i > 0,
            };
            match op.backward(ps, c, d, grads, w) {
                Some(next) => d = next,
                None => return None,
            }
        }
        Some(d)
    }
}

/// Allocates parameters while assembling layers.
pub struct Builder<'a> {
    pub ps: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    pub prefix: String,
}

impl Builder<'_> {
    fn name(&self, layer: &str, what: &str) -> String {
        format!("{}.{}.{}", self.prefix, layer, what)
    }

    pub fn conv(&mut self, layer: &str, cin: usize, cout: usize, geom: ConvGeom) -> Op {
        let fan_in = cin * geom.taps();
        let vals = kaiming_normal(self.rng, cout * fan_in, fan_in);
        let w = self.ps.add(self.name(layer, "weight"), vec![cout, cin, geom.k[0], geom.k[1], geom.k[2]], vals);
        let b = self.ps.add(self.name(layer, "bias"), vec![cout], vec![0.0; cout]);
        Op::Conv { w, b, cout, geom }
    }

    pub fn up2(&mut self, layer: &str, cin: usize, cout: usize) -> Op {
        let vals = kaiming_normal(self.rng, cin * cout * 8, cin);
        let w = self.ps.add(self.name(layer, "weight"), vec![cin, cout, 2, 2, 2], vals);
        let b = self.ps.add(self.name(layer, "bias"), vec![cout], vec![0.0; cout]);
        Op::Up2 { w, b, cout }
    }

    pub fn norm(&mut self, layer: &str, c: usize) -> Op {
        let gamma = self.ps.add(self.name(layer, "gamma"), vec![c], vec![1.0; c]);
        let beta = self.ps.add(self.name(layer, "beta"), vec![c], vec![0.0; c]);
        Op::InstanceNorm { gamma, beta }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::seeded_rng;
    use rand::Rng;

    fn rand_tensor(shape: [usize; 5], seed: u64) -> Tensor {
        let mut r = seeded_rng(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
    }

    /// Finite-difference check of `d/dx sum(g * op(x))` for parameter-free
    /// and normalization layers.
    fn check_input_grad(op: &Op, ps: &ParamStore, shape: [usize; 5]) {
        let x = rand_tensor(shape, 11);
        let g = {
            let y = op.forward(ps, x.clone(), None);
            rand_tensor(y.shape(), 12)
        };
        let loss = |x: &Tensor| -> f64 {
            let y = op.forward(ps, x.clone(), None);
            y.data().iter().zip(g.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let mut cache = Vec::new();
        op.forward(ps, x.clone(), Some(&mut cache));
        let mut grads = ps.zero_grads();
        let dx = op
            .backward(ps, cache.pop().unwrap(), g.clone(), &mut grads, Want::ALL)
            .unwrap();
        for i in (0..x.len()).step_by(7) {
            let h = 1e-2f32;
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h as f64);
            let an = dx.data()[i] as f64;
            assert!((fd - an).abs() < 2e-2 * (1.0 + an.abs()), "{op:?} at {i}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn norm_gradients() {
        let mut ps = ParamStore::new();
        let mut rng = seeded_rng(1);
        let mut b = Builder {
            ps: &mut ps,
            rng: &mut rng,
            prefix: "t".into(),
        };
        let op = b.norm("n", 2);
        ps.values_mut(0).copy_from_slice(&[1.5, 0.7]);
        check_input_grad(&op, &ps, [2, 2, 2, 3, 3]);
    }

    #[test]
    fn activation_and_pool_gradients() {
        let ps = ParamStore::new();
        check_input_grad(&Op::ScaledSigmoid, &ps, [1, 1, 2, 2, 3]);
        check_input_grad(&Op::LeakyRelu(0.2), &ps, [1, 2, 2, 2, 3]);
        check_input_grad(&Op::MaxPool2, &ps, [2, 1, 4, 4, 2]);
    }

    #[test]
    fn instance_norm_output_is_standardized() {
        let mut ps = ParamStore::new();
        let mut rng = seeded_rng(1);
        let op = Builder {
            ps: &mut ps,
            rng: &mut rng,
            prefix: "t".into(),
        }
        .norm("n", 3);
        let y = op.forward(&ps, rand_tensor([3, 2, 4, 4, 4], 5), None);
        for blk in y.data().chunks(64) {
            let m: f32 = blk.iter().sum::<f32>() / 64.0;
            let v: f32 = blk.iter().map(|x| (x - m) * (x - m)).sum::<f32>() / 64.0;
            assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn scaled_sigmoid_range() {
        let y = Op::ScaledSigmoid.forward(&ParamStore::new(), Tensor::from_vec([1, 1, 1, 1, 3], vec![-50.0, 0.0, 50.0]), None);
        assert_eq!(y.data(), &[-1.0, 0.0, 1.0]);
    }
}
