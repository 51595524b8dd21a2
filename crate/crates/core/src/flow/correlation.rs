//! Displacement correlation (cost volume) between two feature maps.
//!
//! Output channel `k = iy * n + ix` (with `n = 2 * max_displacement / stride + 1`)
//! holds displacement `(dx, dy) = (-D + ix * s, -D + iy * s)`: `dy` is the
//! outer index, `dx` the inner one, most negative first. The value at `p` is
//! `<f_i(p), f_j(p + d)> / c`, with out-of-grid neighbours contributing zero.

use crate::error::{Error, Result, Shape};
use crate::tensor::{ensure_same_shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrConfig {
    pub max_displacement: usize,
    pub stride: usize,
}

impl CorrConfig {
    pub fn new(max_displacement: usize, stride: usize) -> Result<Self> {
        let cfg = Self {
            max_displacement,
            stride,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidConfig("correlation stride must be >= 1".into()));
        }
        if !self.max_displacement.is_multiple_of(self.stride) {
            return Err(Error::InvalidConfig(format!(
                "max displacement {} is not a multiple of stride {}",
                self.max_displacement, self.stride
            )));
        }
        Ok(())
    }

    /// Displacements sampled along one axis.
    pub fn steps_per_axis(&self) -> usize {
        2 * self.max_displacement / self.stride + 1
    }

    pub fn output_channels(&self) -> usize {
        self.steps_per_axis().pow(2)
    }

    /// `(dx, dy)` for output channel `k`.
    pub fn displacement(&self, k: usize) -> (isize, isize) {
        let n = self.steps_per_axis();
        let d = self.max_displacement as isize;
        let s = self.stride as isize;
        (-d + (k % n) as isize * s, -d + (k / n) as isize * s)
    }

    /// Inverse of [`CorrConfig::displacement`].
    pub fn channel_of(&self, dx: isize, dy: isize) -> Option<usize> {
        let d = self.max_displacement as isize;
        let s = self.stride as isize;
        let n = self.steps_per_axis();
        let (ix, iy) = (dx + d, dy + d);
        if ix < 0 || iy < 0 || ix % s != 0 || iy % s != 0 {
            return None;
        }
        let (ix, iy) = ((ix / s) as usize, (iy / s) as usize);
        (ix < n && iy < n).then_some(iy * n + ix)
    }
}

/// Visits every in-bounds `(k, y, x, yj, xj)` tuple: output position `(y, x)`
/// in channel `k` pairs with `f_j(yj, xj)`.
fn for_each_pair(h: usize, w: usize, cfg: &CorrConfig, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    for k in 0..cfg.output_channels() {
        let (dx, dy) = cfg.displacement(k);
        for y in 0..h {
            let yj = y as isize + dy;
            if yj < 0 || yj >= h as isize {
                continue;
            }
            for x in 0..w {
                let xj = x as isize + dx;
                if xj < 0 || xj >= w as isize {
                    continue;
                }
                f(k, y, x, yj as usize, xj as usize);
            }
        }
    }
}

pub fn correlation(f_i: &Tensor, f_j: &Tensor, cfg: &CorrConfig) -> Result<Tensor> {
    ensure_same_shape("correlation", f_i, f_j)?;
    cfg.validate()?;
    let (c, h, w) = (f_i.channels(), f_i.height(), f_i.width());
    let norm = 1.0 / c as f64;
    let mut out = Tensor::zeros(Shape::new(cfg.output_channels(), h, w));
    for_each_pair(h, w, cfg, |k, y, x, yj, xj| {
        let mut dot = 0.0;
        for ch in 0..c {
            dot += f_i.get(ch, y, x) * f_j.get(ch, yj, xj);
        }
        out.set(k, y, x, dot * norm);
    });
    Ok(out)
}

/// Returns `(grad_f_i, grad_f_j)` for the cotangent `grad_out` of [`correlation`].
pub fn correlation_backward(
    f_i: &Tensor,
    f_j: &Tensor,
    cfg: &CorrConfig,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    ensure_same_shape("correlation_backward", f_i, f_j)?;
    cfg.validate()?;
    let (c, h, w) = (f_i.channels(), f_i.height(), f_i.width());
    let expected = Shape::new(cfg.output_channels(), h, w);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "correlation_backward",
            left: expected,
            right: grad_out.shape(),
        });
    }
    let norm = 1.0 / c as f64;
    let mut gi = Tensor::zeros(f_i.shape());
    let mut gj = Tensor::zeros(f_j.shape());
    for_each_pair(h, w, cfg, |k, y, x, yj, xj| {
        let g = grad_out.get(k, y, x) * norm;
        if g == 0.0 {
            return;
        }
        for ch in 0..c {
            let a = gi.index(ch, y, x);
            let b = gj.index(ch, yj, xj);
            gi.data_mut()[a] += g * f_j.data()[b];
            gj.data_mut()[b] += g * f_i.data()[a];
        }
    });
    Ok((gi, gj))
}
