//! Aligns two neighbouring frames onto the current one with known flows and
//! aggregates them with cosine-similarity weights.

use featflow::aggregate::{adaptive_weights, aggregate, AggregationInput};
use featflow::flow::bilinear_warp;
use featflow::harness::{generate_synthetic, Motion, SynthSpec};

fn main() -> featflow::Result<()> {
    let spec = SynthSpec {
        motion: Motion::ConstantShift { dx: 1.0, dy: 0.0 },
        noise_sigma: 0.05,
        num_frames: 3,
        ..SynthSpec::default()
    };
    let seq = generate_synthetic(&spec)?;
    let current = seq.frames[1].clone();

    let aligned_prev = bilinear_warp(&seq.frames[0], &seq.gt_flows[0])?;
    let unrelated = seq.frames[2].map(|v| -v);

    let input = AggregationInput::new(current.clone(), vec![aligned_prev, unrelated])?;
    let weights = adaptive_weights(&input)?;
    let (y, x) = (8, 8);
    println!(
        "weights at ({y}, {x}): current {:.3}, aligned neighbour {:.3}, sign-flipped neighbour {:.3}",
        weights[0].get(0, y, x),
        weights[1].get(0, y, x),
        weights[2].get(0, y, x)
    );
    let fused = aggregate(&input)?;
    println!("aggregated map {}; value at centre {:.4} (current {:.4})", fused.shape(), fused.get(0, y, x), current.get(0, y, x));
    Ok(())
}
