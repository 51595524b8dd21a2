//! Self-supervised training of a flow module on synthetic sequences: the only
//! training signal is the transformation residual loss; ground-truth flow is
//! used for evaluation alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{endpoint_error, interior_mse};
use super::synth::{generate_synthetic, SynthSequence, SynthSpec};
use crate::error::{Error, Result};
use crate::flow::bilinear_warp;
use crate::iff::IffModule;
use crate::tensor::sgd_step;
use crate::trl::{trl_backward, trl_forward, TrlConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub trl: TrlConfig,
    /// Training pairs `(current, neighbour)` are at most this many frames apart.
    pub temporal_radius: usize,
    /// Fraction of steps run at the initial learning rate.
    pub lr_drop_at: f64,
    pub lr_drop_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr: 1.0,
            trl: TrlConfig::default(),
            temporal_radius: 10,
            lr_drop_at: 0.6,
            lr_drop_factor: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        if (step as f64) < self.lr_drop_at * self.steps as f64 {
            self.lr
        } else {
            self.lr * self.lr_drop_factor
        }
    }
}

/// Alignment quality of a module on every consecutive pair of a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean endpoint error against ground truth.
    pub epe: f64,
    /// Mean interior MSE between the warped neighbour and the current frame.
    pub aligned_mse: f64,
    /// Mean interior MSE between the raw neighbour and the current frame.
    pub unaligned_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub initial: Evaluation,
    pub last: Evaluation,
}

/// Evaluates the module with `current = frames[t + 1]`, `neighbour = frames[t]`.
pub fn evaluate(module: &IffModule, data: &SynthSequence, border: usize) -> Result<Evaluation> {
    let pairs = data.gt_flows.len();
    let (mut epe, mut aligned, mut unaligned) = (0.0, 0.0, 0.0);
    for t in 0..pairs {
        let (cur, nb) = (&data.frames[t + 1], &data.frames[t]);
        let pred = module.forward(cur, nb)?;
        epe += endpoint_error(&pred, &data.gt_flows[t], border)?;
        aligned += interior_mse(&bilinear_warp(nb, &pred)?, cur, border)?;
        unaligned += interior_mse(nb, cur, border)?;
    }
    let n = pairs as f64;
    Ok(Evaluation {
        epe: epe / n,
        aligned_mse: aligned / n,
        unaligned_mse: unaligned / n,
    })
}

/// Border excluded from evaluation: the correlation reach of the module.
pub fn evaluation_border(module: &IffModule) -> usize {
    module.config().corr.max_displacement
}

/// Trains on an existing sequence.
pub fn train_on(module: &mut IffModule, data: &SynthSequence, cfg: &TrainConfig) -> Result<TrainingReport> {
    cfg.trl.validate()?;
    let frames = &data.frames;
    if frames.len() < 2 {
        return Err(Error::InvalidInput("training needs at least two frames".into()));
    }
    if frames[0].channels() != module.config().in_channels {
        return Err(Error::ChannelCount {
            op: "train_iff",
            expected: module.config().in_channels,
            got: frames[0].channels(),
        });
    }
    let border = evaluation_border(module);
    let initial = evaluate(module, data, border)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut learning_rates = Vec::with_capacity(cfg.steps);
    let last_frame = frames.len() - 1;

    for step in 0..cfg.steps {
        let i = rng.random_range(0..=last_frame);
        let lo = i.saturating_sub(cfg.temporal_radius);
        let hi = (i + cfg.temporal_radius).min(last_frame);
        let j = rng.random_range(lo..=hi);
        let (f_i, f_j) = (&frames[i], &frames[j]);

        module.zero_grads();
        let flow = module.forward(f_i, f_j)?;
        let loss = trl_forward(f_i, f_j, &flow, &cfg.trl)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let grads = trl_backward(f_i, f_j, &flow, &cfg.trl)?;
        module.forward_backward(f_i, f_j, &grads.flow)?;
        let lr = cfg.lr_at(step);
        sgd_step(module.params_mut(), lr);
        losses.push(loss);
        learning_rates.push(lr);
    }

    let last = evaluate(module, data, border)?;
    if !last.epe.is_finite() {
        return Err(Error::Diverged {
            step: cfg.steps,
            loss: last.epe,
        });
    }
    Ok(TrainingReport {
        losses,
        learning_rates,
        initial,
        last,
    })
}

/// Generates the sequence described by `spec` and trains on it.
pub fn train_iff(module: &mut IffModule, spec: &SynthSpec, cfg: &TrainConfig) -> Result<TrainingReport> {
    let data = generate_synthetic(spec)?;
    train_on(module, &data, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::Motion;
    use crate::iff::{IffConfig, Variant};

    fn module() -> IffModule {
        IffModule::build(IffConfig::toy(Variant::Advanced), 0).unwrap()
    }

    #[test]
    fn zero_steps_reports_initial_only() {
        let mut m = module();
        let before = m.clone();
        let cfg = TrainConfig { steps: 0, ..TrainConfig::default() };
        let report = train_iff(&mut m, &SynthSpec::default(), &cfg).unwrap();
        assert!(report.losses.is_empty());
        assert_eq!(report.initial, report.last);
        assert_eq!(m, before);
    }

    #[test]
    fn learning_rate_drops_after_sixty_percent() {
        let cfg = TrainConfig { steps: 10, lr: 0.5, ..TrainConfig::default() };
        let lrs: Vec<f64> = (0..10).map(|s| cfg.lr_at(s)).collect();
        assert_eq!(lrs[..6], [0.5; 6]);
        assert!(lrs[6..].iter().all(|&l| (l - 0.05).abs() < 1e-15));
    }

    #[test]
    fn loss_falls_on_constant_shift() {
        let data = generate_synthetic(&SynthSpec::default()).unwrap();
        let pair_loss = |m: &IffModule| -> f64 {
            (1..data.frames.len())
                .map(|t| {
                    let (a, b) = (&data.frames[t], &data.frames[t - 1]);
                    trl_forward(a, b, &m.forward(a, b).unwrap(), &TrlConfig::default()).unwrap()
                })
                .sum()
        };
        let mut m = module();
        let before = pair_loss(&m);
        let cfg = TrainConfig { steps: 1000, temporal_radius: 1, ..TrainConfig::default() };
        let report = train_on(&mut m, &data, &cfg).unwrap();
        assert!(report.losses.iter().all(|l| l.is_finite()));
        assert!(pair_loss(&m) < before);
    }

    #[test]
    fn zero_motion_stays_at_noise_floor() {
        let sigma = 0.01;
        let spec = SynthSpec {
            motion: Motion::ConstantShift { dx: 0.0, dy: 0.0 },
            noise_sigma: sigma,
            ..SynthSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let trl = TrlConfig::default();
        // loss at the correct zero flow is bounded by the noise level
        let zero = crate::flow::FlowMap::zeros(spec.height, spec.width);
        let at_truth = trl_forward(&data.frames[1], &data.frames[0], &zero, &trl).unwrap();
        assert!(at_truth < trl.lambda * 4.0 * sigma * sigma);

        let mut m = module();
        let cfg = TrainConfig { steps: 200, temporal_radius: 1, ..TrainConfig::default() };
        let report = train_on(&mut m, &data, &cfg).unwrap();
        assert!(report.last.epe <= report.initial.epe + 0.1, "{:?}", report);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut m = module();
        let spec = SynthSpec { channels: 3, ..SynthSpec::default() };
        assert!(matches!(
            train_iff(&mut m, &spec, &TrainConfig::default()),
            Err(Error::ChannelCount { .. })
        ));
    }
}
