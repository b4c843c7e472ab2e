//! The network families: U-Net and deep linear generators, and the 2D patch
//! critic with its score-map size formula.
//!
//! `cargo run --release --example networks`

use isocycle::nn::{
    volume_tensor, BundleConfig, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
    ModelBundle, Tensor,
};
use isocycle::volume::Volume;
use ndarray::Array3;

fn main() -> anyhow::Result<()> {
    let bundle = ModelBundle::new(BundleConfig::default(), 0)?;
    println!("default bundle parameter counts:");
    for (name, n) in bundle.parameter_counts() {
        println!("  {name:<7} {n:>10}");
    }

    let v = Volume::normalized(
        Array3::from_shape_fn([24, 24, 24], |(z, y, x)| ((z + y + x) % 5) as f32 / 2.5 - 1.0),
        [0.5; 3],
    )?;
    let unet = Generator::new(GeneratorConfig::unet(4), 1)?;
    let dlg = Generator::new(GeneratorConfig::dlg(8), 2)?;
    println!("unet output {:?}", unet.apply(&v)?.dims());
    println!(
        "dlg output {:?}, receptive field {}",
        dlg.apply(&v)?.dims(),
        dlg.config.dlg_receptive_field()
    );

    let cfg = DiscriminatorConfig::default();
    for n in [32, 64, 100, 132, 144] {
        println!("critic map for {n}x{n}: {:?}", cfg.output_size(n));
    }
    let d = Discriminator::new(DiscriminatorConfig::with_channels(vec![4, 8, 8, 8]), 3)?;
    let slices = volume_tensor(&v).reshape([1, 24, 1, 24, 24]);
    println!("critic accepts side >= {}: {}", cfg.min_input(), d.forward(slices).is_ok());
    let big: Tensor = Tensor::zeros([1, 2, 1, 48, 64]);
    println!("scores for two 48x64 images: {:?}", d.forward(big)?.shape());
    Ok(())
}
