//! Builds both flow-module variants, prints their structure, and runs a
//! forward pass; then round-trips the advanced one through a checkpoint.

use featflow::io::{decode_checkpoint, encode_checkpoint};
use featflow::{IffConfig, IffModule, Shape, Tensor, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> featflow::Result<()> {
    for variant in [Variant::Basic, Variant::Advanced] {
        let full = IffModule::build(IffConfig::full(variant), 0)?.report();
        println!(
            "{:<8} full size: {} conv layers, {} projections, {} parameters",
            variant.as_str(),
            full.conv_layer_count,
            full.projection_count,
            full.parameter_count
        );
    }

    let module = IffModule::build(IffConfig::toy(Variant::Advanced), 7)?;
    for layer in module.layers() {
        println!("  {:<10} {:>3} -> {:<3} k{}", layer.name, layer.in_channels(), layer.out_channels(), layer.weight.dims()[2]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = Shape::new(module.config().in_channels, 12, 12);
    let (f_i, f_j) = (Tensor::random(shape, 1.0, &mut rng), Tensor::random(shape, 1.0, &mut rng));
    let flow = module.forward(&f_i, &f_j)?;
    println!("flow {}x{}, mean magnitude {:.4}", flow.height(), flow.width(), flow.mean_magnitude());
    if let Some(vol) = module.correlation_volume(&f_i, &f_j)? {
        println!("correlation stage: {} channels", vol.channels());
    }

    let mut bytes = Vec::new();
    encode_checkpoint(&module, &mut bytes)?;
    let restored = decode_checkpoint(&mut &bytes[..])?;
    println!("checkpoint {} bytes, restored identical: {}", bytes.len(), restored == module);
    Ok(())
}
