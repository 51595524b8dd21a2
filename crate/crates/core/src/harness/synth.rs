//! Synthetic feature sequences with known ground-truth flow.
//!
//! A scene is a continuous multi-channel pattern; frame `t` samples it at
//! content coordinates obtained by undoing `t` frames of motion. Ground truth
//! `gt_flows[t]` is expressed in the warp convention: sampling frame `t` at
//! `p + gt_flows[t](p)` reproduces frame `t + 1` at `p` (before noise).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result, Shape};
use crate::flow::FlowMap;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    GaussianBlobs,
    Sinusoid,
    RandomSmooth,
}

impl Pattern {
    fn as_str(&self) -> &'static str {
        match self {
            Pattern::GaussianBlobs => "gaussian-blobs",
            Pattern::Sinusoid => "sinusoid",
            Pattern::RandomSmooth => "random-smooth",
        }
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-blobs" => Ok(Pattern::GaussianBlobs),
            "sinusoid" => Ok(Pattern::Sinusoid),
            "random-smooth" => Ok(Pattern::RandomSmooth),
            _ => Err(Error::InvalidConfig(format!("unknown pattern '{s}'"))),
        }
    }
}

/// Motion of the scene content between consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    /// Content moves by `(dx, dy)` cells per frame.
    ConstantShift { dx: f64, dy: f64 },
    /// Content rotates by `angle` radians per frame about the grid centre.
    Rotation { angle: f64 },
    /// Each blob (the whole scene for non-blob patterns) takes an i.i.d.
    /// Gaussian step with standard deviation `step` per axis per frame.
    RandomWalk { step: f64 },
}

impl Motion {
    fn name(&self) -> &'static str {
        match self {
            Motion::ConstantShift { .. } => "constant-shift",
            Motion::Rotation { .. } => "rotation",
            Motion::RandomWalk { .. } => "random-walk",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_frames: usize,
    pub pattern: Pattern,
    pub motion: Motion,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            channels: 8,
            height: 16,
            width: 16,
            num_frames: 8,
            pattern: Pattern::GaussianBlobs,
            motion: Motion::ConstantShift { dx: 2.0, dy: 0.0 },
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig(format!(
                "degenerate synthetic dims {}x{}x{}",
                self.channels, self.height, self.width
            )));
        }
        if self.num_frames < 2 {
            return Err(Error::InvalidConfig("need at least 2 frames".into()));
        }
        let finite = match self.motion {
            Motion::ConstantShift { dx, dy } => dx.is_finite() && dy.is_finite(),
            Motion::Rotation { angle } => angle.is_finite(),
            Motion::RandomWalk { step } => step.is_finite() && step >= 0.0,
        };
        if !finite || !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("motion and noise parameters must be finite and non-negative where applicable".into()));
        }
        Ok(())
    }

    /// Parses the flat `key=value` format (one pair per line, `#` comments).
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut spec = SynthSpec::default();
        let mut motion = "constant-shift".to_string();
        let (mut dx, mut dy, mut angle, mut step) = (2.0, 0.0, 0.05, 0.5);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn fmt::Display| Error::Format(format!("line {}: {key}: {e}", lineno + 1));
            match key {
                "channels" => spec.channels = value.parse().map_err(|e| bad(&e))?,
                "height" => spec.height = value.parse().map_err(|e| bad(&e))?,
                "width" => spec.width = value.parse().map_err(|e| bad(&e))?,
                "num_frames" => spec.num_frames = value.parse().map_err(|e| bad(&e))?,
                "pattern" => spec.pattern = value.parse()?,
                "motion" => motion = value.to_string(),
                "dx" => dx = value.parse().map_err(|e| bad(&e))?,
                "dy" => dy = value.parse().map_err(|e| bad(&e))?,
                "angle" => angle = value.parse().map_err(|e| bad(&e))?,
                "step" => step = value.parse().map_err(|e| bad(&e))?,
                "noise_sigma" => spec.noise_sigma = value.parse().map_err(|e| bad(&e))?,
                "seed" => spec.seed = value.parse().map_err(|e| bad(&e))?,
                other => return Err(Error::Format(format!("line {}: unknown key '{other}'", lineno + 1))),
            }
        }
        spec.motion = match motion.as_str() {
            "constant-shift" => Motion::ConstantShift { dx, dy },
            "rotation" => Motion::Rotation { angle },
            "random-walk" => Motion::RandomWalk { step },
            other => return Err(Error::InvalidConfig(format!("unknown motion '{other}'"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "channels={}\nheight={}\nwidth={}\nnum_frames={}\npattern={}\nmotion={}\n",
            self.channels,
            self.height,
            self.width,
            self.num_frames,
            self.pattern.as_str(),
            self.motion.name()
        );
        match self.motion {
            Motion::ConstantShift { dx, dy } => s += &format!("dx={dx}\ndy={dy}\n"),
            Motion::Rotation { angle } => s += &format!("angle={angle}\n"),
            Motion::RandomWalk { step } => s += &format!("step={step}\n"),
        }
        s += &format!("noise_sigma={}\nseed={}\n", self.noise_sigma, self.seed);
        s
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.channels, self.height, self.width)
    }
}

/// Frames plus the ground-truth flow between each consecutive pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub frames: Vec<Tensor>,
    pub gt_flows: Vec<FlowMap>,
}

struct Blob {
    x: f64,
    y: f64,
    sigma: f64,
    amp: Vec<f64>,
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

enum Scene {
    Blobs(Vec<Blob>),
    /// Per channel, a sum of plane waves.
    Waves(Vec<Vec<Wave>>),
}

impl Scene {
    fn new(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Self {
        let (w, h) = (spec.width as f64, spec.height as f64);
        match spec.pattern {
            Pattern::GaussianBlobs => {
                // cover the area the content sweeps through over the whole sequence
                let travel = match spec.motion {
                    Motion::ConstantShift { dx, dy } => (dx.abs(), dy.abs()),
                    Motion::Rotation { .. } => (0.0, 0.0),
                    Motion::RandomWalk { step } => (3.0 * step, 3.0 * step),
                };
                let span = spec.num_frames as f64;
                let (x0, x1) = (-3.0 - travel.0 * span, w + 3.0 + travel.0 * span);
                let (y0, y1) = (-3.0 - travel.1 * span, h + 3.0 + travel.1 * span);
                let count = (((x1 - x0) * (y1 - y0)) / 12.0).ceil() as usize;
                let blobs = (0..count)
                    .map(|_| Blob {
                        x: rng.random_range(x0..x1),
                        y: rng.random_range(y0..y1),
                        sigma: rng.random_range(1.2..2.2),
                        amp: (0..spec.channels).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    })
                    .collect();
                Scene::Blobs(blobs)
            }
            Pattern::Sinusoid | Pattern::RandomSmooth => {
                let (n, kmin, kmax) = match spec.pattern {
                    Pattern::Sinusoid => (2, 0.3, 0.8),
                    _ => (8, 0.1, 0.9),
                };
                let amp = 1.0 / (n as f64).sqrt();
                let waves = (0..spec.channels)
                    .map(|_| {
                        (0..n)
                            .map(|_| {
                                let k = rng.random_range(kmin..kmax);
                                let dir = rng.random_range(0.0..std::f64::consts::TAU);
                                Wave {
                                    kx: k * dir.cos(),
                                    ky: k * dir.sin(),
                                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                                    amp,
                                }
                            })
                            .collect()
                    })
                    .collect();
                Scene::Waves(waves)
            }
        }
    }

    fn blob_weight(b: &Blob, x: f64, y: f64) -> f64 {
        let (ex, ey) = (x - b.x, y - b.y);
        (-(ex * ex + ey * ey) / (2.0 * b.sigma * b.sigma)).exp()
    }

    fn sample(&self, c: usize, x: f64, y: f64) -> f64 {
        match self {
            Scene::Blobs(blobs) => blobs.iter().map(|b| b.amp[c] * Self::blob_weight(b, x, y)).sum(),
            Scene::Waves(waves) => waves[c]
                .iter()
                .map(|w| w.amp * (w.kx * x + w.ky * y + w.phase).sin())
                .sum(),
        }
    }
}

fn centre(spec: &SynthSpec) -> (f64, f64) {
    ((spec.width as f64 - 1.0) / 2.0, (spec.height as f64 - 1.0) / 2.0)
}

/// Content coordinate shown at `(x, y)` after rotating by `-theta` about the centre.
fn rotate_back(spec: &SynthSpec, x: f64, y: f64, theta: f64) -> (f64, f64) {
    let (cx, cy) = centre(spec);
    let (s, c) = (-theta).sin_cos();
    let (ex, ey) = (x - cx, y - cy);
    (c * ex - s * ey + cx, s * ex + c * ey + cy)
}

/// Analytic flow of a per-frame rotation by `angle` about the grid centre.
pub fn rotation_flow(spec: &SynthSpec, angle: f64) -> FlowMap {
    FlowMap::from_fn(spec.height, spec.width, |y, x| {
        let (qx, qy) = rotate_back(spec, x as f64, y as f64, angle);
        (qx - x as f64, qy - y as f64)
    })
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut scene = Scene::new(spec, &mut rng);
    let shape = spec.shape();
    let n = spec.num_frames;
    let mut frames = Vec::with_capacity(n);
    let mut gt_flows = Vec::with_capacity(n - 1);

    match spec.motion {
        Motion::ConstantShift { dx, dy } => {
            for t in 0..n {
                let (ox, oy) = (t as f64 * dx, t as f64 * dy);
                frames.push(Tensor::from_fn(shape, |c, y, x| {
                    scene.sample(c, x as f64 - ox, y as f64 - oy)
                }));
            }
            for _ in 1..n {
                gt_flows.push(FlowMap::constant(spec.height, spec.width, -dx, -dy));
            }
        }
        Motion::Rotation { angle } => {
            for t in 0..n {
                frames.push(Tensor::from_fn(shape, |c, y, x| {
                    let (qx, qy) = rotate_back(spec, x as f64, y as f64, t as f64 * angle);
                    scene.sample(c, qx, qy)
                }));
            }
            let flow = rotation_flow(spec, angle);
            gt_flows.resize(n - 1, flow);
        }
        Motion::RandomWalk { step } => {
            let normal = Normal::new(0.0, step).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            match &mut scene {
                Scene::Blobs(blobs) => {
                    frames.push(Tensor::from_fn(shape, |c, y, x| scene_sample_blobs(blobs, c, x, y)));
                    for _ in 1..n {
                        let steps: Vec<(f64, f64)> = blobs
                            .iter()
                            .map(|_| (normal.sample(&mut rng), normal.sample(&mut rng)))
                            .collect();
                        for (b, (sx, sy)) in blobs.iter_mut().zip(&steps) {
                            b.x += sx;
                            b.y += sy;
                        }
                        // per position, blob steps averaged by each blob's footprint in the new frame
                        gt_flows.push(FlowMap::from_fn(spec.height, spec.width, |y, x| {
                            let (mut wsum, mut fx, mut fy) = (0.0, 0.0, 0.0);
                            for (b, (sx, sy)) in blobs.iter().zip(&steps) {
                                let w = Scene::blob_weight(b, x as f64, y as f64);
                                wsum += w;
                                fx -= w * sx;
                                fy -= w * sy;
                            }
                            if wsum > 0.0 {
                                (fx / wsum, fy / wsum)
                            } else {
                                (0.0, 0.0)
                            }
                        }));
                        frames.push(Tensor::from_fn(shape, |c, y, x| scene_sample_blobs(blobs, c, x, y)));
                    }
                }
                Scene::Waves(_) => {
                    let (mut ox, mut oy) = (0.0, 0.0);
                    frames.push(Tensor::from_fn(shape, |c, y, x| scene.sample(c, x as f64, y as f64)));
                    for _ in 1..n {
                        let (sx, sy) = (normal.sample(&mut rng), normal.sample(&mut rng));
                        ox += sx;
                        oy += sy;
                        gt_flows.push(FlowMap::constant(spec.height, spec.width, -sx, -sy));
                        frames.push(Tensor::from_fn(shape, |c, y, x| {
                            scene.sample(c, x as f64 - ox, y as f64 - oy)
                        }));
                    }
                }
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for f in &mut frames {
            for v in f.data_mut() {
                *v += normal.sample(&mut noise_rng);
            }
        }
    }
    Ok(SynthSequence { frames, gt_flows })
}

fn scene_sample_blobs(blobs: &[Blob], c: usize, x: usize, y: usize) -> f64 {
    blobs
        .iter()
        .map(|b| b.amp[c] * Scene::blob_weight(b, x as f64, y as f64))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::bilinear_warp;

    #[test]
    fn integer_shift_is_exact_on_interior() {
        for pattern in [Pattern::GaussianBlobs, Pattern::Sinusoid, Pattern::RandomSmooth] {
            let spec = SynthSpec {
                channels: 3,
                height: 10,
                width: 12,
                num_frames: 4,
                pattern,
                motion: Motion::ConstantShift { dx: 1.0, dy: 0.0 },
                noise_sigma: 0.0,
                seed: 3,
            };
            let seq = generate_synthetic(&spec).unwrap();
            for t in 0..3 {
                let warped = bilinear_warp(&seq.frames[t], &seq.gt_flows[t]).unwrap();
                for c in 0..3 {
                    for y in 0..10 {
                        for x in 1..12 {
                            assert_eq!(warped.get(c, y, x), seq.frames[t + 1].get(c, y, x));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn zero_motion_frames_match_up_to_noise() {
        let spec = SynthSpec {
            motion: Motion::ConstantShift { dx: 0.0, dy: 0.0 },
            noise_sigma: 0.01,
            ..SynthSpec::default()
        };
        let seq = generate_synthetic(&spec).unwrap();
        assert!(seq
            .gt_flows
            .iter()
            .all(|f| f.as_tensor().data().iter().all(|&v| v == 0.0)));
        for f in &seq.frames[1..] {
            let max_diff = f
                .data()
                .iter()
                .zip(seq.frames[0].data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_diff < 12.0 * 0.01);
        }
    }

    #[test]
    fn deterministic_from_seed() {
        let spec = SynthSpec {
            noise_sigma: 0.05,
            motion: Motion::RandomWalk { step: 0.4 },
            ..SynthSpec::default()
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn degenerate_dims_rejected() {
        let spec = SynthSpec {
            width: 0,
            ..SynthSpec::default()
        };
        assert!(generate_synthetic(&spec).is_err());
        let spec = SynthSpec {
            num_frames: 1,
            ..SynthSpec::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn kv_round_trip() {
        let spec = SynthSpec {
            motion: Motion::Rotation { angle: 0.03 },
            pattern: Pattern::RandomSmooth,
            noise_sigma: 0.125,
            seed: 42,
            ..SynthSpec::default()
        };
        assert_eq!(SynthSpec::parse_kv(&spec.to_kv()).unwrap(), spec);
        assert!(SynthSpec::parse_kv("colour=blue").is_err());
        assert!(SynthSpec::parse_kv("channels").is_err());
    }

    #[test]
    fn rotation_flow_is_rigid() {
        let angle = 0.05;
        let spec = SynthSpec {
            height: 12,
            width: 14,
            motion: Motion::Rotation { angle },
            ..SynthSpec::default()
        };
        let seq = generate_synthetic(&spec).unwrap();
        let (cx, cy) = (6.5, 5.5);
        let (s, c) = angle.sin_cos();
        for flow in &seq.gt_flows {
            for y in 0..12 {
                for x in 0..14 {
                    let (ex, ey) = (x as f64 - cx, y as f64 - cy);
                    let want = (c * ex + s * ey - ex, -s * ex + c * ey - ey);
                    let (dx, dy) = flow.at(y, x);
                    assert!((dx - want.0).abs() < 1e-6 && (dy - want.1).abs() < 1e-6);
                }
            }
            // central-difference divergence of a rigid rotation is 2cos(a) - 2
            for y in 1..11 {
                for x in 1..13 {
                    let div = (flow.at(y, x + 1).0 - flow.at(y, x - 1).0) / 2.0
                        + (flow.at(y + 1, x).1 - flow.at(y - 1, x).1) / 2.0;
                    assert!(div.abs() <= angle * angle + 1e-12, "{div}");
                }
            }
        }
    }
}
