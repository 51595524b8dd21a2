//! Transformation residual loss: a smooth-L1 penalty on the difference between
//! the neighbour features warped by the predicted flow and the current
//! features, averaged over positions and channels and scaled by `lambda`.

use crate::error::{Error, Result};
use crate::flow::{bilinear_warp, bilinear_warp_backward, FlowMap};
use crate::tensor::{ensure_same_shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrlConfig {
    pub lambda: f64,
    pub smooth_l1_delta: f64,
    /// When set, no gradient flows into the two feature maps, only into the flow.
    pub stop_feature_grad: bool,
}

impl Default for TrlConfig {
    fn default() -> Self {
        Self {
            lambda: 0.65,
            smooth_l1_delta: 1.0,
            stop_feature_grad: false,
        }
    }
}

impl TrlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("trl lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.smooth_l1_delta > 0.0 && self.smooth_l1_delta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "smooth-L1 delta must be > 0, got {}",
                self.smooth_l1_delta
            )));
        }
        Ok(())
    }
}

/// Quadratic inside `(-delta, delta)`, linear outside, C1 at the crossover.
#[inline]
pub fn smooth_l1(x: f64, delta: f64) -> f64 {
    if x.abs() < delta {
        0.5 * x * x / delta
    } else {
        x.abs() - 0.5 * delta
    }
}

#[inline]
pub fn smooth_l1_grad(x: f64, delta: f64) -> f64 {
    if x.abs() < delta {
        x / delta
    } else {
        x.signum()
    }
}

fn check(f_i: &Tensor, f_j: &Tensor, flow: &FlowMap, cfg: &TrlConfig) -> Result<()> {
    cfg.validate()?;
    ensure_same_shape("trl", f_i, f_j)?;
    if flow.height() != f_i.height() || flow.width() != f_i.width() {
        return Err(Error::ShapeMismatch {
            op: "trl",
            left: f_i.shape(),
            right: flow.as_tensor().shape(),
        });
    }
    Ok(())
}

fn normalizer(f: &Tensor, cfg: &TrlConfig) -> f64 {
    cfg.lambda / f.shape().len() as f64
}

pub fn trl_forward(f_i: &Tensor, f_j: &Tensor, flow: &FlowMap, cfg: &TrlConfig) -> Result<f64> {
    check(f_i, f_j, flow, cfg)?;
    let warped = bilinear_warp(f_j, flow)?;
    let total: f64 = warped
        .data()
        .iter()
        .zip(f_i.data())
        .map(|(w, c)| smooth_l1(w - c, cfg.smooth_l1_delta))
        .sum();
    // lambda applied last so the loss is exactly linear in it
    Ok(cfg.lambda * (total / f_i.shape().len() as f64))
}

/// Gradients of [`trl_forward`] with respect to `(f_i, f_j, flow)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrlGrads {
    pub f_i: Tensor,
    pub f_j: Tensor,
    pub flow: FlowMap,
}

pub fn trl_backward(f_i: &Tensor, f_j: &Tensor, flow: &FlowMap, cfg: &TrlConfig) -> Result<TrlGrads> {
    check(f_i, f_j, flow, cfg)?;
    let warped = bilinear_warp(f_j, flow)?;
    let k = normalizer(f_i, cfg);
    let grad_res = Tensor::from_vec(
        f_i.shape(),
        warped
            .data()
            .iter()
            .zip(f_i.data())
            .map(|(w, c)| k * smooth_l1_grad(w - c, cfg.smooth_l1_delta))
            .collect(),
    )?;
    let (grad_f_j, grad_flow) = bilinear_warp_backward(f_j, flow, &grad_res)?;
    if cfg.stop_feature_grad {
        return Ok(TrlGrads {
            f_i: Tensor::zeros(f_i.shape()),
            f_j: Tensor::zeros(f_j.shape()),
            flow: grad_flow,
        });
    }
    Ok(TrlGrads {
        f_i: grad_res.scale(-1.0),
        f_j: grad_f_j,
        flow: grad_flow,
    })
}
