//! Evaluates the transformation residual loss for a range of candidate
//! flows: it is smallest at the true displacement.

use featflow::harness::{generate_synthetic, SynthSpec};
use featflow::trl::{trl_backward, trl_forward, TrlConfig};
use featflow::FlowMap;

fn main() -> featflow::Result<()> {
    let spec = SynthSpec::default();
    let seq = generate_synthetic(&spec)?;
    let (current, neighbour) = (&seq.frames[1], &seq.frames[0]);
    let cfg = TrlConfig::default();

    for dx in [-3.0, -2.5, -2.0, -1.5, -1.0, 0.0, 1.0] {
        let flow = FlowMap::constant(spec.height, spec.width, dx, 0.0);
        let loss = trl_forward(current, neighbour, &flow, &cfg)?;
        let grads = trl_backward(current, neighbour, &flow, &cfg)?;
        let mean_gdx: f64 = grads.flow.as_tensor().channel(0).iter().sum::<f64>() / (spec.height * spec.width) as f64;
        println!("dx {dx:>5.1}: loss {loss:.6}  mean dL/ddx {mean_gdx:+.2e}");
    }
    println!("ground truth dx = {}", seq.gt_flows[0].at(8, 8).0);
    Ok(())
}
