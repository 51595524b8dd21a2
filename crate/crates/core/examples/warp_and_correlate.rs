//! Warps a feature map by a constant flow and locates the shift with the
//! correlation layer.

use featflow::flow::{bilinear_warp, correlation, CorrConfig};
use featflow::{FlowMap, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> featflow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (h, w) = (20, 20);
    let current = Tensor::random(Shape::new(16, h, w), 1.0, &mut rng);

    // neighbour content sits 2 cells right and 1 up of the current frame
    let neighbour = bilinear_warp(&current, &FlowMap::constant(h, w, -2.0, 1.0))?;

    let cfg = CorrConfig::new(4, 1)?;
    let volume = correlation(&current, &neighbour, &cfg)?;
    println!("correlation volume: {} channels for max displacement {}", volume.channels(), cfg.max_displacement);

    let (y, x) = (h / 2, w / 2);
    let best = (0..volume.channels())
        .max_by(|&a, &b| volume.get(a, y, x).total_cmp(&volume.get(b, y, x)))
        .unwrap();
    let (dx, dy) = cfg.displacement(best);
    println!("best match at ({y}, {x}): displacement dx={dx} dy={dy}");

    // warping the neighbour back by that displacement recovers the current frame
    let aligned = bilinear_warp(&neighbour, &FlowMap::constant(h, w, dx as f64, dy as f64))?;
    println!("aligned == current at centre: {}", aligned.get(0, y, x) == current.get(0, y, x));

    let half = bilinear_warp(&current, &FlowMap::constant(h, w, 0.5, 0.0))?;
    println!(
        "half-cell shift averages neighbours: {:.6} vs {:.6}",
        half.get(0, y, x),
        0.5 * (current.get(0, y, x) + current.get(0, y, x + 1))
    );
    Ok(())
}
