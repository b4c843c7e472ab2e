//! A small CPU neural-network engine: tensors, layers with hand-written
//! backward passes, the generator and discriminator families, and a
//! checkpoint container.

pub mod bundle;
pub mod checkpoint;
pub mod conv;
pub mod layers;
pub mod nets;
pub mod params;
pub mod real;
pub mod tensor;

pub use bundle::{BundleConfig, ModelBundle};
pub use checkpoint::Archive;
pub use layers::Want;
pub use nets::{
    volume_tensor, Discriminator, DiscriminatorConfig, GenCache, Generator, GeneratorConfig,
    GeneratorKind,
};
pub use params::{Adam, AdamConfig, Grads, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
