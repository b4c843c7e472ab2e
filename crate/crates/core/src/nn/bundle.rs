//! The two generators and six discriminators trained together.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Archive;
use super::nets::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use super::params::seeded_rng;
use crate::error::{Error, Result};
use crate::volume::Plane;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BundleConfig {
    /// Super-resolving generator (anisotropic to isotropic).
    pub g: GeneratorConfig,
    /// Blurring generator (isotropic to anisotropic).
    pub f: GeneratorConfig,
    pub d: DiscriminatorConfig,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            g: GeneratorConfig::default(),
            f: GeneratorConfig::dlg(64),
            d: DiscriminatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: BundleConfig,
    pub g: Generator,
    pub f: Generator,
    /// Critics of the isotropic domain, indexed by [`Plane`] order.
    pub d_x: [Discriminator; 3],
    /// Critics of the measured domain, indexed by [`Plane`] order.
    pub d_y: [Discriminator; 3],
}

/// Component names, in checkpoint and seeding order.
pub const COMPONENTS: [&str; 8] = ["G", "F", "D_X.xy", "D_X.xz", "D_X.yz", "D_Y.xy", "D_Y.xz", "D_Y.yz"];

impl ModelBundle {
    pub fn new(config: BundleConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let seeds: Vec<u64> = (0..COMPONENTS.len()).map(|_| rng.random()).collect();
        let disc = |i: usize| Discriminator::new(config.d.clone(), seeds[i]);
        Ok(ModelBundle {
            g: Generator::new(config.g.clone(), seeds[0])?,
            f: Generator::new(config.f.clone(), seeds[1])?,
            d_x: [disc(2)?, disc(3)?, disc(4)?],
            d_y: [disc(5)?, disc(6)?, disc(7)?],
            config,
        })
    }

    pub fn parameter_counts(&self) -> Vec<(&'static str, usize)> {
        COMPONENTS
            .iter()
            .zip(self.stores())
            .map(|(n, c)| (*n, c.count()))
            .collect()
    }

    pub fn discriminator(&self, domain_x: bool, plane: Plane) -> &Discriminator {
        let i = Plane::ALL.iter().position(|&p| p == plane).expect("plane");
        if domain_x {
            &self.d_x[i]
        } else {
            &self.d_y[i]
        }
    }

    pub(crate) fn stores(&self) -> [&super::ParamStore; 8] {
        [
            &self.g.params,
            &self.f.params,
            &self.d_x[0].params,
            &self.d_x[1].params,
            &self.d_x[2].params,
            &self.d_y[0].params,
            &self.d_y[1].params,
            &self.d_y[2].params,
        ]
    }

    pub(crate) fn stores_mut(&mut self) -> [&mut super::ParamStore; 8] {
        let [dx0, dx1, dx2] = &mut self.d_x;
        let [dy0, dy1, dy2] = &mut self.d_y;
        [
            &mut self.g.params,
            &mut self.f.params,
            &mut dx0.params,
            &mut dx1.params,
            &mut dx2.params,
            &mut dy0.params,
            &mut dy1.params,
            &mut dy2.params,
        ]
    }

    /// Adds every component's parameters to an archive.
    pub fn export(&self, archive: &mut Archive) {
        for (name, ps) in COMPONENTS.iter().zip(self.stores()) {
            archive.push_params(name, ps);
        }
    }

    /// Rebuilds a bundle from `config` and fills it from `archive`.
    pub fn import(config: BundleConfig, archive: &Archive) -> Result<Self> {
        let mut b = ModelBundle::new(config, 0)?;
        for (name, ps) in COMPONENTS.iter().zip(b.stores_mut()) {
            archive.load_params(name, ps)?;
        }
        Ok(b)
    }

    /// Loads only the super-resolving generator from a checkpoint file.
    pub fn load_generator(path: &std::path::Path) -> Result<Generator> {
        let archive = Archive::read(path)?;
        let config: BundleConfig = serde_json::from_value(
            archive
                .meta
                .get("model")
                .cloned()
                .ok_or_else(|| Error::format("checkpoint lacks a model configuration"))?,
        )?;
        let mut g = Generator::new(config.g, 0)?;
        archive.load_params("G", &mut g.params)?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{volume_tensor, GeneratorConfig};
    use crate::volume::Volume;
    use ndarray::Array3;

    fn small() -> BundleConfig {
        BundleConfig {
            g: GeneratorConfig::unet(2),
            f: GeneratorConfig::dlg(2),
            d: DiscriminatorConfig::with_channels(vec![2, 2, 2, 2]),
        }
    }

    #[test]
    fn export_import_reproduces_outputs_bitwise() {
        let b = ModelBundle::new(small(), 5).unwrap();
        let mut a = Archive::new(serde_json::json!({ "model": b.config }));
        b.export(&mut a);
        let bytes = a.to_bytes().unwrap();
        let back = ModelBundle::import(small(), &Archive::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, b);
        let v = Volume::normalized(Array3::from_shape_fn((8, 8, 8), |(z, y, x)| ((z + y * x) % 7) as f32 / 7.0), [1.0; 3]).unwrap();
        let y1 = b.g.forward(volume_tensor(&v));
        let y2 = back.g.forward(volume_tensor(&v));
        assert_eq!(y1.data(), y2.data());
    }

    #[test]
    fn components_get_distinct_seeds() {
        let b = ModelBundle::new(small(), 5).unwrap();
        assert_ne!(b.d_x[0].params, b.d_x[1].params);
        assert_eq!(b.parameter_counts().len(), 8);
    }
}
