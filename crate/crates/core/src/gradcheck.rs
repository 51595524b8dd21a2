//! Central finite-difference gradient checking and the suite that covers
//! every differentiable operation in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{aggregate, aggregate_backward, AggregationInput};
use crate::error::{Error, Result, Shape};
use crate::flow::{bilinear_warp, bilinear_warp_backward, correlation, correlation_backward, CorrConfig, FlowMap};
use crate::iff::{IffConfig, IffModule, ResidualBlock, Variant};
use crate::tensor::{
    add_elementwise, add_elementwise_backward, concat_channels, concat_channels_backward, relu, relu_backward,
    Conv2d, Param, Tensor,
};
use crate::trl::{trl_backward, trl_forward, TrlConfig};

pub const STEP: f64 = 1e-5;
/// Tolerance for single primitives.
pub const PRIMITIVE_TOL: f64 = 1e-6;
/// Tolerance for composed graphs.
pub const GRAPH_TOL: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 20;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Max relative error between `analytic` and the central difference of `f` at `x`.
pub fn grad_check(x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
    if x.len() != analytic.len() {
        return Err(Error::InvalidInput(format!(
            "{} coordinates but {} analytic partials",
            x.len(),
            analytic.len()
        )));
    }
    let mut eval = |p: &[f64]| -> Result<f64> {
        let v = f(p)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("graph evaluated to {v}")))
        }
    };
    eval(x)?;
    let mut p = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        p[i] = x[i] + STEP;
        let up = eval(&p)?;
        p[i] = x[i] - STEP;
        let down = eval(&p)?;
        p[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * STEP)));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub tolerance: f64,
    pub max_error: f64,
    pub seeds: u64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

type Check = fn(u64) -> Result<f64>;

const CHECKS: &[(&str, f64, Check)] = &[
    ("conv2d", PRIMITIVE_TOL, check_conv),
    ("concat", PRIMITIVE_TOL, check_concat),
    ("add", PRIMITIVE_TOL, check_add),
    ("relu", PRIMITIVE_TOL, check_relu),
    ("bilinear_warp", PRIMITIVE_TOL, check_warp),
    ("correlation", PRIMITIVE_TOL, check_correlation),
    ("trl", PRIMITIVE_TOL, check_trl),
    ("aggregate", PRIMITIVE_TOL, check_aggregate),
    ("residual_block", GRAPH_TOL, check_block),
    ("iff_basic", GRAPH_TOL, |s| check_iff(Variant::Basic, s)),
    ("iff_advanced", GRAPH_TOL, |s| check_iff(Variant::Advanced, s)),
    ("iff_advanced_trl", GRAPH_TOL, check_iff_trl),
];

pub fn check_names() -> impl Iterator<Item = &'static str> {
    CHECKS.iter().map(|c| c.0)
}

/// Runs every check over seeds `0..seeds`. `tolerance` overrides the
/// per-check default when given.
pub fn run_suite(seeds: u64, tolerance: Option<f64>) -> Result<Vec<CheckResult>> {
    CHECKS
        .iter()
        .map(|&(name, tol, check)| {
            let mut max_error = 0.0f64;
            for seed in 0..seeds {
                max_error = max_error.max(check(seed)?);
            }
            Ok(CheckResult {
                name,
                tolerance: tolerance.unwrap_or(tol),
                max_error,
                seeds,
            })
        })
        .collect()
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x100000001b3) ^ salt)
}

/// Uniform in `±[0.1, 1]`, keeping clear of kinks at zero.
fn signed_away_from_zero(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Flow with fractional parts in `[0.15, 0.85]`, away from the bilinear kinks.
fn fractional_flow(h: usize, w: usize, reach: i32, rng: &mut ChaCha8Rng) -> FlowMap {
    let mut comp = || rng.random_range(-reach..reach) as f64 + rng.random_range(0.15..0.85);
    let values: Vec<(f64, f64)> = (0..h * w).map(|_| (comp(), comp())).collect();
    FlowMap::from_fn(h, w, |y, x| values[y * w + x])
}

/// Concatenation of several slices, with a way back.
struct Packed {
    lens: Vec<usize>,
    values: Vec<f64>,
}

impl Packed {
    fn new<'a>(parts: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut lens = Vec::new();
        let mut values = Vec::new();
        for p in parts {
            lens.push(p.len());
            values.extend_from_slice(p);
        }
        Self { lens, values }
    }

    fn split<'a>(&self, x: &'a [f64]) -> Vec<&'a [f64]> {
        let mut out = Vec::with_capacity(self.lens.len());
        let mut at = 0;
        for &n in &self.lens {
            out.push(&x[at..at + n]);
            at += n;
        }
        out
    }
}

fn with_data(like: &Tensor, data: &[f64]) -> Tensor {
    Tensor::from_vec(like.shape(), data.to_vec()).expect("same length")
}

fn load_params<'a>(params: impl IntoIterator<Item = &'a mut Param>, parts: &[&[f64]]) {
    for (p, v) in params.into_iter().zip(parts) {
        p.value_mut().copy_from_slice(v);
    }
}

fn param_values(params: Vec<&mut Param>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    params
        .into_iter()
        .map(|p| (p.value().to_vec(), p.grad().to_vec()))
        .unzip()
}

fn check_conv(seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 1);
    let mut worst = 0.0f64;
    for (kernel, stride) in [(3, 1), (1, 1), (3, 2)] {
        let mut conv = Conv2d::new("c", 3, 4, kernel);
        conv.stride = stride;
        conv.init_uniform(1.0, &mut rng);
        for b in conv.bias.value_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        let x = Tensor::random(Shape::new(3, 5, 6), 1.0, &mut rng);
        let out = conv.forward(&x)?;
        let r = Tensor::random(out.shape(), 1.0, &mut rng);
        let gx = conv.backward(&x, &r)?;
        let packed = Packed::new([x.data(), conv.weight.value(), conv.bias.value()]);
        let analytic: Vec<f64> = [gx.data(), conv.weight.grad(), conv.bias.grad()].concat();
        let err = grad_check(&packed.values, &analytic, |v| {
            let parts = packed.split(v);
            let mut c = conv.clone();
            load_params(c.params_mut(), &parts[1..]);
            c.forward(&with_data(&x, parts[0]))?.dot(&r)
        })?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_concat(seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 2);
    let a = Tensor::random(Shape::new(2, 4, 3), 1.0, &mut rng);
    let b = Tensor::random(Shape::new(3, 4, 3), 1.0, &mut rng);
    let r = Tensor::random(Shape::new(5, 4, 3), 1.0, &mut rng);
    let (ga, gb) = concat_channels_backward(2, &r)?;
    let packed = Packed::new([a.data(), b.data()]);
    grad_check(&packed.values, &[ga.data(), gb.data()].concat(), |v| {
        let p = packed.split(v);
        concat_channels(&with_data(&a, p[0]), &with_data(&b, p[1]))?.dot(&r)
    })
}

fn check_add(seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 3);
    let a = Tensor::random(Shape::new(3, 4, 4), 1.0, &mut rng);
    let b = Tensor::random(Shape::new(3, 4, 4), 1.0, &mut rng);
    let r = Tensor::random(Shape::new(3, 4, 4), 1.0, &mut rng);
    let (ga, gb) = add_elementwise_backward(&r);
    let packed = Packed::new([a.data(), b.data()]);
    grad_check(&packed.values, &[ga.data(), gb.data()].concat(), |v| {
        let p = packed.split(v);
        add_elementwise(&with_data(&a, p[0]), &with_data(&b, p[1]))?.dot(&r)
    })
}

fn check_relu(seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 4);
    let x = signed_away_from_zero(Shape::new(3, 5, 5), &mut rng);
    let r = Tensor::random(x.shape(), 1.0, &mut rng);
    let g = relu_backward(&x, &r)?;
    grad_check(x.data(), g.data(), |v| relu(&with_data(&x, v)).dot(&r))
}

fn check_warp(seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 5);
    let (h, w) = (5, 6);
    let feature = Tensor::random(Shape::new(3, h, w), 1.0, &mut rng);
    let flow = fractional_flow(h, w, 2, &mut rng);
    // loss = sum of squares of the warped output
    let out = bilinear_warp(&feature, &flow)?;
    let (gf, gflow) = bilinear_warp_backward(&feature, &flow, &out.scale(2.0))?;
    let packed = Packed::new([feature.data(), flow.as_tensor().data()]);
    grad_check(&packed.values, &[gf.data(), gflow.as_tensor().data()].concat(), |v| {
        let p = packed.split(v);
        let fl = FlowMap::from_tensor(with_data(flow.as_tensor(), p[1]))?;
        let o = bilinear_warp(&with_data(&feature, p[0]), &fl)?;
        o.dot(&o)
    })
}

fn check_correlation(seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 6);
    let mut worst = 0.0f64;
    for cfg in [CorrConfig::new(2, 1)?, CorrConfig::new(2, 2)?] {
        let a = Tensor::random(Shape::new(3, 5, 6), 1.0, &mut rng);
        let b = Tensor::random(Shape::new(3, 5, 6), 1.0, &mut rng);
        let r = Tensor::random(correlation(&a, &b, &cfg)?.shape(), 1.0, &mut rng);
        let (ga, gb) = correlation_backward(&a, &b, &cfg, &r)?;
        let packed = Packed::new([a.data(), b.data()]);
        let err = grad_check(&packed.values, &[ga.data(), gb.data()].concat(), |v| {
            let p = packed.split(v);
            correlation(&with_data(&a, p[0]), &with_data(&b, p[1]), &cfg)?.dot(&r)
        })?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_trl(seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 7);
    let (h, w) = (5, 5);
    // amplitudes on both sides of the smooth-L1 crossover
    let f_i = Tensor::random(Shape::new(2, h, w), 1.5, &mut rng);
    let f_j = Tensor::random(Shape::new(2, h, w), 1.5, &mut rng);
    let flow = fractional_flow(h, w, 1, &mut rng);
    let cfg = TrlConfig::default();
    let g = trl_backward(&f_i, &f_j, &flow, &cfg)?;
    let packed = Packed::new([f_i.data(), f_j.data(), flow.as_tensor().data()]);
    let analytic = [g.f_i.data(), g.f_j.data(), g.flow.as_tensor().data()].concat();
    grad_check(&packed.values, &analytic, |v| {
        let p = packed.split(v);
        let fl = FlowMap::from_tensor(with_data(flow.as_tensor(), p[2]))?;
        trl_forward(&with_data(&f_i, p[0]), &with_data(&f_j, p[1]), &fl, &cfg)
    })
}

fn check_aggregate(seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 8);
    let shape = Shape::new(3, 4, 4);
    let current = Tensor::random(shape, 1.0, &mut rng);
    let neighbors: Vec<Tensor> = (0..2).map(|_| Tensor::random(shape, 1.0, &mut rng)).collect();
    let r = Tensor::random(shape, 1.0, &mut rng);
    let input = AggregationInput::new(current.clone(), neighbors.clone())?;
    let (gc, gn) = aggregate_backward(&input, &r)?;
    let packed = Packed::new(std::iter::once(current.data()).chain(neighbors.iter().map(|n| n.data())));
    let analytic: Vec<f64> = std::iter::once(gc.data())
        .chain(gn.iter().map(|g| g.data()))
        .flatten()
        .copied()
        .collect();
    grad_check(&packed.values, &analytic, |v| {
        let p = packed.split(v);
        let nb = p[1..].iter().map(|d| with_data(&current, d)).collect();
        aggregate(&AggregationInput::new(with_data(&current, p[0]), nb)?)?.dot(&r)
    })
}

fn check_block(seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 9);
    let mut worst = 0.0f64;
    for (cin, cout) in [(4, 3), (3, 3)] {
        let mut block = ResidualBlock::new("eb", cin, cout);
        block.init(&mut rng);
        for layer in block.layers_mut() {
            for b in layer.bias.value_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        let x = Tensor::random(Shape::new(cin, 5, 5), 1.0, &mut rng);
        let (out, cache) = block.forward_cached(&x)?;
        let r = Tensor::random(out.shape(), 1.0, &mut rng);
        let gx = block.backward(&cache, &r)?;
        let (values, grads) = param_values(block.params_mut().collect());
        let packed = Packed::new(std::iter::once(x.data()).chain(values.iter().map(Vec::as_slice)));
        let analytic: Vec<f64> = std::iter::once(gx.data().to_vec()).chain(grads).flatten().collect();
        let err = grad_check(&packed.values, &analytic, |v| {
            let p = packed.split(v);
            let mut b = block.clone();
            load_params(b.params_mut(), &p[1..]);
            b.forward(&with_data(&x, p[0]))?.dot(&r)
        })?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn toy_module(variant: Variant, seed: u64, rng: &mut ChaCha8Rng) -> Result<IffModule> {
    let mut config = IffConfig::toy(variant);
    config.in_channels = 4;
    config.mid_channels = 4;
    config.fuse_channels = 3;
    let mut module = IffModule::build(config, seed)?;
    for p in module.params_mut() {
        if p.dims()[1..] == [1, 1, 1] {
            for b in p.value_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
    }
    Ok(module)
}

/// ReLU inputs closer to zero than this are re-drawn: a step of `STEP` in
/// any coordinate moves them by far less.
const KINK_MARGIN: f64 = 2e-4;

/// Draws a toy module and input pair whose ReLU inputs all clear
/// [`KINK_MARGIN`], retrying deterministically from `rng`.
fn kink_free_instance(
    variant: Variant,
    seed: u64,
    rng: &mut ChaCha8Rng,
    adjust: impl Fn(&mut IffModule),
) -> Result<(IffModule, Tensor, Tensor)> {
    for _ in 0..64 {
        let mut module = toy_module(variant, seed, rng)?;
        adjust(&mut module);
        let shape = Shape::new(module.config().in_channels, 6, 6);
        let f_i = Tensor::random(shape, 1.0, rng);
        let f_j = Tensor::random(shape, 1.0, rng);
        if module.relu_margin(&f_i, &f_j)? > KINK_MARGIN {
            return Ok((module, f_i, f_j));
        }
    }
    Err(Error::InvalidInput("no kink-free instance found".into()))
}

fn check_iff(variant: Variant, seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 10 + variant as u64);
    let (mut module, f_i, f_j) = kink_free_instance(variant, seed, &mut rng, |_| ())?;
    let r = FlowMap::from_tensor(Tensor::random(Shape::new(2, 6, 6), 1.0, &mut rng))?;
    module.zero_grads();
    let (gi, gj) = module.forward_backward(&f_i, &f_j, &r)?;
    let (values, grads) = param_values(module.params_mut());
    let packed = Packed::new([f_i.data(), f_j.data()].into_iter().chain(values.iter().map(Vec::as_slice)));
    let analytic: Vec<f64> = [gi.data().to_vec(), gj.data().to_vec()].into_iter().chain(grads).flatten().collect();
    grad_check(&packed.values, &analytic, |v| {
        let p = packed.split(v);
        let mut m = module.clone();
        load_params(m.params_mut(), &p[2..]);
        m.forward(&with_data(&f_i, p[0]), &with_data(&f_j, p[1]))?
            .as_tensor()
            .dot(r.as_tensor())
    })
}

fn check_iff_trl(seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 20);
    let (mut module, f_i, f_j) = kink_free_instance(Variant::Advanced, seed, &mut rng, |m| {
        // offset the predicted flow from the integer lattice
        if let Some(head) = m.layer_mut("head") {
            head.bias.value_mut().copy_from_slice(&[0.3, -0.4]);
        }
    })?;
    let cfg = TrlConfig::default();
    let flow = module.forward(&f_i, &f_j)?;
    let g = trl_backward(&f_i, &f_j, &flow, &cfg)?;
    module.zero_grads();
    let (mut gi, mut gj) = module.forward_backward(&f_i, &f_j, &g.flow)?;
    gi.add_assign(&g.f_i)?;
    gj.add_assign(&g.f_j)?;
    let (values, grads) = param_values(module.params_mut());
    let packed = Packed::new([f_i.data(), f_j.data()].into_iter().chain(values.iter().map(Vec::as_slice)));
    let analytic: Vec<f64> = [gi.data().to_vec(), gj.data().to_vec()].into_iter().chain(grads).flatten().collect();
    grad_check(&packed.values, &analytic, |v| {
        let p = packed.split(v);
        let mut m = module.clone();
        load_params(m.params_mut(), &p[2..]);
        let (a, b) = (with_data(&f_i, p[0]), with_data(&f_j, p[1]));
        let fl = m.forward(&a, &b)?;
        trl_forward(&a, &b, &fl, &cfg)
    })
}
