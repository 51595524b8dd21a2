//! In-network feature flow estimation graphs.
//!
//! Two variants map a pair of feature maps `(f_i, f_j)` (current frame,
//! neighbour frame) to a [`FlowMap`] that warps `f_j` onto `f_i`:
//!
//! * **basic**: `conv1x1(f_i) ++ conv3x3(f_j)` concatenated, then a 3x3 head
//!   emitting two channels. Three convolutions.
//! * **advanced**: a weight-shared residual block `eb1` embeds both frames,
//!   their correlation volume is projected by `corr_proj`, a second residual
//!   block `eb2` narrows the current-frame embedding, the two are added and
//!   passed through `fuse` and `head`. Nine convolutions, plus 1x1 skip
//!   projections where a block changes width.
//!
//! Every convolution except the head is followed by a ReLU.

mod block;

pub use block::{BlockCache, ResidualBlock};
use block::min_abs_of;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{correlation, correlation_backward, CorrConfig, FlowMap};
use crate::tensor::{
    concat_channels, concat_channels_backward, relu, relu_backward, zero_grads, Conv2d, Param, Tensor,
};

/// Initial head weights are shrunk by this factor so the untrained module
/// predicts near-zero flow.
const HEAD_GAIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Basic,
    Advanced,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Basic => "basic",
            Variant::Advanced => "advanced",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Variant::Basic),
            "advanced" => Ok(Variant::Advanced),
            other => Err(Error::InvalidConfig(format!("unknown IFF variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IffConfig {
    pub variant: Variant,
    pub in_channels: usize,
    pub mid_channels: usize,
    pub fuse_channels: usize,
    pub corr: CorrConfig,
}

impl IffConfig {
    /// Full-size widths: 1024-channel backbone features, 512 / 128 internal
    /// widths, correlation with max displacement 10 at stride 2.
    pub fn full(variant: Variant) -> Self {
        Self {
            variant,
            in_channels: 1024,
            mid_channels: 512,
            fuse_channels: 128,
            corr: CorrConfig {
                max_displacement: 10,
                stride: 2,
            },
        }
    }

    /// Desk-scale widths used for gradient checks and training runs.
    pub fn toy(variant: Variant) -> Self {
        Self {
            variant,
            in_channels: 8,
            mid_channels: 8,
            fuse_channels: 4,
            corr: CorrConfig {
                max_displacement: 2,
                stride: 1,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.mid_channels == 0 || self.fuse_channels == 0 {
            return Err(Error::InvalidConfig("channel counts must be >= 1".into()));
        }
        self.corr.validate()
    }
}

/// Structural summary of a module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerReport {
    /// Convolutions on the main path (skip projections excluded).
    pub conv_layer_count: usize,
    /// 1x1 skip projections inside residual blocks.
    pub projection_count: usize,
    /// Weights plus biases over every convolution, projections included.
    pub parameter_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Graph {
    Basic {
        branch_i: Conv2d,
        branch_j: Conv2d,
        head: Conv2d,
    },
    Advanced {
        eb1: ResidualBlock,
        corr_proj: Conv2d,
        eb2: ResidualBlock,
        fuse: Conv2d,
        head: Conv2d,
    },
}

enum Cache {
    Basic {
        f_i: Tensor,
        f_j: Tensor,
        pre_i: Tensor,
        pre_j: Tensor,
        cat: Tensor,
    },
    Advanced {
        eb1_i: BlockCache,
        eb1_j: BlockCache,
        e_i: Tensor,
        e_j: Tensor,
        corr: Tensor,
        pre_proj: Tensor,
        eb2: BlockCache,
        merged: Tensor,
        pre_fuse: Tensor,
        fused: Tensor,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IffModule {
    config: IffConfig,
    graph: Graph,
}

impl IffModule {
    /// Builds the graph for `config` with weights drawn deterministically from `seed`.
    pub fn build(config: IffConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let IffConfig {
            in_channels: cin,
            mid_channels: mid,
            fuse_channels: fuse,
            ..
        } = config;
        let graph = match config.variant {
            Variant::Basic => Graph::Basic {
                branch_i: Conv2d::new("branch_i", cin, mid, 1),
                branch_j: Conv2d::new("branch_j", cin, mid, 3),
                head: Conv2d::new("head", 2 * mid, 2, 3),
            },
            Variant::Advanced => Graph::Advanced {
                eb1: ResidualBlock::new("eb1", cin, mid),
                corr_proj: Conv2d::new("corr_proj", config.corr.output_channels(), fuse, 3),
                eb2: ResidualBlock::new("eb2", mid, fuse),
                fuse: Conv2d::new("fuse", fuse, fuse, 3),
                head: Conv2d::new("head", fuse, 2, 3),
            },
        };
        let mut module = Self { config, graph };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in module.layers_mut() {
            let gain = if layer.name == "head" { HEAD_GAIN } else { 1.0 };
            layer.init_uniform(gain, &mut rng);
        }
        Ok(module)
    }

    pub fn config(&self) -> &IffConfig {
        &self.config
    }

    /// Every convolution in a stable order.
    pub fn layers(&self) -> Vec<&Conv2d> {
        match &self.graph {
            Graph::Basic {
                branch_i,
                branch_j,
                head,
            } => vec![branch_i, branch_j, head],
            Graph::Advanced {
                eb1,
                corr_proj,
                eb2,
                fuse,
                head,
            } => eb1
                .layers()
                .chain([corr_proj])
                .chain(eb2.layers())
                .chain([fuse, head])
                .collect(),
        }
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Conv2d> {
        match &mut self.graph {
            Graph::Basic {
                branch_i,
                branch_j,
                head,
            } => vec![branch_i, branch_j, head],
            Graph::Advanced {
                eb1,
                corr_proj,
                eb2,
                fuse,
                head,
            } => eb1
                .layers_mut()
                .chain([corr_proj])
                .chain(eb2.layers_mut())
                .chain([fuse, head])
                .collect(),
        }
    }

    pub fn layer(&self, name: &str) -> Option<&Conv2d> {
        self.layers().into_iter().find(|l| l.name == name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Conv2d> {
        self.layers_mut().into_iter().find(|l| l.name == name)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn zero_grads(&mut self) {
        zero_grads(self.params_mut());
    }

    pub fn report(&self) -> LayerReport {
        let layers = self.layers();
        let projection_count = layers.iter().filter(|l| l.name.ends_with(".proj")).count();
        LayerReport {
            conv_layer_count: layers.len() - projection_count,
            projection_count,
            parameter_count: layers.iter().map(|l| l.param_count()).sum(),
        }
    }

    fn check_inputs(&self, f_i: &Tensor, f_j: &Tensor) -> Result<()> {
        if f_i.shape() != f_j.shape() {
            return Err(Error::ShapeMismatch {
                op: "iff forward",
                left: f_i.shape(),
                right: f_j.shape(),
            });
        }
        if f_i.channels() != self.config.in_channels {
            return Err(Error::ChannelCount {
                op: "iff forward",
                expected: self.config.in_channels,
                got: f_i.channels(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, f_i: &Tensor, f_j: &Tensor) -> Result<FlowMap> {
        Ok(self.forward_cached(f_i, f_j)?.0)
    }

    /// The correlation volume the advanced graph computes; `None` for basic.
    pub fn correlation_volume(&self, f_i: &Tensor, f_j: &Tensor) -> Result<Option<Tensor>> {
        match self.forward_cached(f_i, f_j)?.1 {
            Cache::Advanced { corr, .. } => Ok(Some(corr)),
            Cache::Basic { .. } => Ok(None),
        }
    }

    /// Smallest distance of any ReLU input from zero for this input pair.
    /// Finite-difference checks use it to stay clear of kinks.
    pub fn relu_margin(&self, f_i: &Tensor, f_j: &Tensor) -> Result<f64> {
        Ok(match self.forward_cached(f_i, f_j)?.1 {
            Cache::Basic { pre_i, pre_j, .. } => min_abs_of(&pre_i).min(min_abs_of(&pre_j)),
            Cache::Advanced {
                eb1_i,
                eb1_j,
                pre_proj,
                eb2,
                pre_fuse,
                ..
            } => eb1_i
                .relu_margin()
                .min(eb1_j.relu_margin())
                .min(min_abs_of(&pre_proj))
                .min(eb2.relu_margin())
                .min(min_abs_of(&pre_fuse)),
        })
    }

    fn forward_cached(&self, f_i: &Tensor, f_j: &Tensor) -> Result<(FlowMap, Cache)> {
        self.check_inputs(f_i, f_j)?;
        match &self.graph {
            Graph::Basic {
                branch_i,
                branch_j,
                head,
            } => {
                let pre_i = branch_i.forward(f_i)?;
                let pre_j = branch_j.forward(f_j)?;
                let cat = concat_channels(&relu(&pre_i), &relu(&pre_j))?;
                let flow = FlowMap::from_tensor(head.forward(&cat)?)?;
                let cache = Cache::Basic {
                    f_i: f_i.clone(),
                    f_j: f_j.clone(),
                    pre_i,
                    pre_j,
                    cat,
                };
                Ok((flow, cache))
            }
            Graph::Advanced {
                eb1,
                corr_proj,
                eb2,
                fuse,
                head,
            } => {
                let (e_i, eb1_i) = eb1.forward_cached(f_i)?;
                let (e_j, eb1_j) = eb1.forward_cached(f_j)?;
                let corr = correlation(&e_i, &e_j, &self.config.corr)?;
                let pre_proj = corr_proj.forward(&corr)?;
                let (narrow, eb2_cache) = eb2.forward_cached(&e_i)?;
                let mut merged = relu(&pre_proj);
                merged.add_assign(&narrow)?;
                let pre_fuse = fuse.forward(&merged)?;
                let fused = relu(&pre_fuse);
                let flow = FlowMap::from_tensor(head.forward(&fused)?)?;
                let cache = Cache::Advanced {
                    eb1_i,
                    eb1_j,
                    e_i,
                    e_j,
                    corr,
                    pre_proj,
                    eb2: eb2_cache,
                    merged,
                    pre_fuse,
                    fused,
                };
                Ok((flow, cache))
            }
        }
    }

    /// Runs forward, then back-propagates `grad_flow`. Parameter gradients
    /// accumulate; returns the gradients with respect to `f_i` and `f_j`.
    pub fn forward_backward(&mut self, f_i: &Tensor, f_j: &Tensor, grad_flow: &FlowMap) -> Result<(Tensor, Tensor)> {
        // eb1 receives two contributions per call; summing them before adding
        // to the accumulator keeps repeated calls exactly additive
        let held: Vec<Vec<f64>> = self.params_mut().iter().map(|p| p.grad().to_vec()).collect();
        self.zero_grads();
        let grads = self.backward_fresh(f_i, f_j, grad_flow);
        for (p, old) in self.params_mut().into_iter().zip(held) {
            for (g, o) in p.grad_mut().iter_mut().zip(old) {
                *g += o;
            }
        }
        grads
    }

    fn backward_fresh(&mut self, f_i: &Tensor, f_j: &Tensor, grad_flow: &FlowMap) -> Result<(Tensor, Tensor)> {
        let (flow, cache) = self.forward_cached(f_i, f_j)?;
        if flow.as_tensor().shape() != grad_flow.as_tensor().shape() {
            return Err(Error::ShapeMismatch {
                op: "iff backward",
                left: flow.as_tensor().shape(),
                right: grad_flow.as_tensor().shape(),
            });
        }
        let g = grad_flow.as_tensor();
        match (&mut self.graph, cache) {
            (
                Graph::Basic {
                    branch_i,
                    branch_j,
                    head,
                },
                Cache::Basic {
                    f_i,
                    f_j,
                    pre_i,
                    pre_j,
                    cat,
                },
            ) => {
                let g_cat = head.backward(&cat, g)?;
                let (g_ai, g_aj) = concat_channels_backward(pre_i.channels(), &g_cat)?;
                let g_fi = branch_i.backward(&f_i, &relu_backward(&pre_i, &g_ai)?)?;
                let g_fj = branch_j.backward(&f_j, &relu_backward(&pre_j, &g_aj)?)?;
                Ok((g_fi, g_fj))
            }
            (
                Graph::Advanced {
                    eb1,
                    corr_proj,
                    eb2,
                    fuse,
                    head,
                },
                Cache::Advanced {
                    eb1_i,
                    eb1_j,
                    e_i,
                    e_j,
                    corr,
                    pre_proj,
                    eb2: eb2_cache,
                    merged,
                    pre_fuse,
                    fused,
                },
            ) => {
                let g_fused = head.backward(&fused, g)?;
                let g_merged = fuse.backward(&merged, &relu_backward(&pre_fuse, &g_fused)?)?;
                // merged = relu(pre_proj) + eb2(e_i)
                let mut g_e_i = eb2.backward(&eb2_cache, &g_merged)?;
                let g_corr = corr_proj.backward(&corr, &relu_backward(&pre_proj, &g_merged)?)?;
                let (gc_i, g_e_j) = correlation_backward(&e_i, &e_j, &self.config.corr, &g_corr)?;
                g_e_i.add_assign(&gc_i)?;
                let g_fi = eb1.backward(&eb1_i, &g_e_i)?;
                let g_fj = eb1.backward(&eb1_j, &g_e_j)?;
                Ok((g_fi, g_fj))
            }
            _ => unreachable!("cache variant always matches graph variant"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Shape;

    fn inputs(cfg: &IffConfig, h: usize, w: usize, seed: u64) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Shape::new(cfg.in_channels, h, w);
        (Tensor::random(s, 1.0, &mut rng), Tensor::random(s, 1.0, &mut rng))
    }

    #[test]
    fn layer_counts() {
        let basic = IffModule::build(IffConfig::toy(Variant::Basic), 0).unwrap();
        let adv = IffModule::build(IffConfig::toy(Variant::Advanced), 0).unwrap();
        assert_eq!(basic.report().conv_layer_count, 3);
        assert_eq!(adv.report().conv_layer_count, 9);
        // toy eb1 is 8 -> 8 (identity skip), eb2 is 8 -> 4 (projected)
        assert_eq!(adv.report().projection_count, 1);
    }

    #[test]
    fn toy_parameter_count_closed_form() {
        let term = |o: usize, i: usize, k: usize| o * i * k * k + o;
        let adv = IffModule::build(IffConfig::toy(Variant::Advanced), 0).unwrap();
        let expect = term(8, 8, 1) + term(8, 8, 1) + term(8, 8, 3) // eb1
            + term(4, 25, 3) // corr_proj
            + term(4, 8, 1) + term(4, 4, 1) + term(4, 4, 3) + term(4, 8, 1) // eb2 + proj
            + term(4, 4, 3) // fuse
            + term(2, 4, 3); // head
        assert_eq!(adv.report().parameter_count, expect);

        let basic = IffModule::build(IffConfig::toy(Variant::Basic), 0).unwrap();
        assert_eq!(
            basic.report().parameter_count,
            term(8, 8, 1) + term(8, 8, 3) + term(2, 16, 3)
        );
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = IffConfig::toy(Variant::Advanced);
        assert_eq!(IffModule::build(cfg, 9).unwrap(), IffModule::build(cfg, 9).unwrap());
        assert_ne!(IffModule::build(cfg, 9).unwrap(), IffModule::build(cfg, 10).unwrap());
    }

    #[test]
    fn rejects_invalid_config_and_inputs() {
        let mut cfg = IffConfig::toy(Variant::Basic);
        cfg.mid_channels = 0;
        assert!(IffModule::build(cfg, 0).is_err());

        let m = IffModule::build(IffConfig::toy(Variant::Basic), 0).unwrap();
        let a = Tensor::zeros(Shape::new(3, 4, 4));
        assert!(matches!(m.forward(&a, &a), Err(Error::ChannelCount { .. })));
    }

    #[test]
    fn output_is_two_channel_and_small_at_init() {
        for variant in [Variant::Basic, Variant::Advanced] {
            let cfg = IffConfig::toy(variant);
            let m = IffModule::build(cfg, 1).unwrap();
            let (f_i, _) = inputs(&cfg, 7, 5, 2);
            let flow = m.forward(&f_i, &f_i).unwrap();
            assert_eq!(flow.as_tensor().shape(), Shape::new(2, 7, 5));
            assert!(flow.as_tensor().is_finite());
            assert!(flow.mean_magnitude() < 0.5);
        }
    }

    #[test]
    fn toy_correlation_has_25_channels() {
        let cfg = IffConfig::toy(Variant::Advanced);
        let m = IffModule::build(cfg, 0).unwrap();
        let (a, b) = inputs(&cfg, 6, 6, 0);
        let corr = m.correlation_volume(&a, &b).unwrap().unwrap();
        assert_eq!(corr.shape(), Shape::new(25, 6, 6));
    }

    #[test]
    fn zero_cotangent_and_accumulation() {
        let cfg = IffConfig::toy(Variant::Advanced);
        let mut m = IffModule::build(cfg, 3).unwrap();
        let (a, b) = inputs(&cfg, 5, 5, 4);

        let (ga, gb) = m.forward_backward(&a, &b, &FlowMap::zeros(5, 5)).unwrap();
        assert!(ga.data().iter().chain(gb.data()).all(|&v| v == 0.0));
        assert!(m.params_mut().iter().all(|p| p.grad().iter().all(|&g| g == 0.0)));

        let gflow = FlowMap::constant(5, 5, 0.7, -0.3);
        m.forward_backward(&a, &b, &gflow).unwrap();
        let once: Vec<Vec<f64>> = m.params_mut().iter().map(|p| p.grad().to_vec()).collect();
        m.forward_backward(&a, &b, &gflow).unwrap();
        for (p, g1) in m.params_mut().iter().zip(&once) {
            for (g2, g1) in p.grad().iter().zip(g1) {
                assert_eq!(*g2, 2.0 * g1);
            }
        }
    }
}
