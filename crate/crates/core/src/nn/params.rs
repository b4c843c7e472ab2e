//! Named parameter storage, gradients and the Adam optimizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::real::Real;

/// Index of a parameter array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Flat collection of named, shaped parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl ParamStore {
    /// Order-sensitive checksum over every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for x in v {
                h ^= x.to_bits() as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Same names and shapes with every value converted to `U`.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self.values.iter().map(|v| v.iter().map(|&x| U::cast(x.as_f64())).collect()).collect(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<T>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        self.names.push(name.into());
        self.shapes.push(shape);
        self.values.push(values);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn values(&self, i: usize) -> &[T] {
        &self.values[i]
    }

    pub fn values_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.values[i]
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize], &[T])> {
        self.names
            .iter()
            .zip(&self.shapes)
            .zip(&self.values)
            .map(|((n, s), v)| (n.as_str(), s.as_slice(), v.as_slice()))
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads(self.values.iter().map(|v| vec![T::zero(); v.len()]).collect())
    }
}

/// Gradient buffers parallel to a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T = f32>(pub Vec<Vec<T>>);

impl<T: Real> Grads<T> {
    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.0[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.0[id.0]
    }

    pub fn zero(&mut self) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// He-normal weights: `N(0, 2 / fan_in)`.
pub fn kaiming_normal(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng) as f32).collect()
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f32>> = (0..params.len())
            .map(|i| vec![0.0; params.values(i).len()])
            .collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update. A zero learning rate leaves the
    /// parameters bit-for-bit unchanged.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let step_size = (c.lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = c.eps as f32;
        for i in 0..params.len() {
            let p = params.values_mut(i);
            let g = &grads.0[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                if c.lr != 0.0 {
                    p[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_moves_against_gradient() {
        let mut ps = ParamStore::new();
        let id = ps.add("w", vec![2], vec![1.0, -1.0]);
        let mut g = ps.zero_grads();
        g.get_mut(id).copy_from_slice(&[0.5, -0.5]);
        let mut opt = Adam::new(&ps, AdamConfig::default());
        opt.update(&mut ps, &g);
        // First step moves by lr * sign(g) up to eps.
        assert!((ps.get(id)[0] - (1.0 - 1e-4)).abs() < 1e-7);
        assert!((ps.get(id)[1] - (-1.0 + 1e-4)).abs() < 1e-7);
    }

    #[test]
    fn zero_learning_rate_is_bitwise_noop() {
        let mut ps = ParamStore::new();
        ps.add("w", vec![3], vec![0.1, 0.2, 0.3]);
        let before = ps.clone();
        let mut g = ps.zero_grads();
        g.0[0] = vec![1.0, 2.0, 3.0];
        let mut opt = Adam::new(
            &ps,
            AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
        );
        opt.update(&mut ps, &g);
        assert_eq!(ps, before);
    }

    #[test]
    fn kaiming_is_seeded() {
        let a = kaiming_normal(&mut seeded_rng(4), 100, 27);
        let b = kaiming_normal(&mut seeded_rng(4), 100, 27);
        assert_eq!(a, b);
        let var = a.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / 100.0;
        assert!(var > 0.02 && var < 0.12, "variance {var}");
    }
}
