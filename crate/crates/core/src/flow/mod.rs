//! Feature-level geometry: flow maps, bilinear warping and the displacement
//! correlation layer.

mod correlation;
mod warp;

pub use correlation::{correlation, correlation_backward, CorrConfig};
pub use warp::{bilinear_warp, bilinear_warp_backward};

use crate::error::{Error, Result, Shape};
use crate::tensor::Tensor;

/// Per-position displacement in feature-grid cells. Channel 0 is `dx`
/// (positive rightward), channel 1 is `dy` (positive downward).
///
/// A flow `M` warps a source map `F` by sampling `F(p + M(p))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap(Tensor);

impl FlowMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Tensor::zeros(Shape::new(2, height, width)))
    }

    pub fn constant(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        Self(Tensor::from_fn(Shape::new(2, height, width), |c, _, _| {
            if c == 0 {
                dx
            } else {
                dy
            }
        }))
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Self {
        let mut flow = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(y, x);
                flow.set(y, x, dx, dy);
            }
        }
        flow
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.channels() != 2 {
            return Err(Error::ChannelCount {
                op: "FlowMap",
                expected: 2,
                got: t.channels(),
            });
        }
        Ok(Self(t))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        (self.0.get(0, y, x), self.0.get(1, y, x))
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, dx: f64, dy: f64) {
        self.0.set(0, y, x, dx);
        self.0.set(1, y, x, dy);
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Mean Euclidean norm of the displacement vectors.
    pub fn mean_magnitude(&self) -> f64 {
        let n = self.height() * self.width();
        if n == 0 {
            return 0.0;
        }
        let (dx, dy) = (self.0.channel(0), self.0.channel(1));
        dx.iter().zip(dy).map(|(a, b)| a.hypot(*b)).sum::<f64>() / n as f64
    }
}

impl TryFrom<Tensor> for FlowMap {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        Self::from_tensor(t)
    }
}

impl AsRef<Tensor> for FlowMap {
    fn as_ref(&self) -> &Tensor {
        &self.0
    }
}
