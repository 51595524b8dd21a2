//! Dense `channels x height x width` tensors of `f64` and the handful of
//! primitives the flow-estimation graphs are built from. Every primitive with
//! learnable or differentiable inputs has an explicit backward function; there
//! is no tape.

mod conv;

pub use conv::{conv2d_backward, conv2d_forward, Conv2d};

use rand::Rng;

use crate::error::{Error, Result, Shape};

/// Channel-major (c, y, x) dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::InvalidInput(format!(
                "tensor {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f(c, y, x)` at every position.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { shape, data }
    }

    /// Uniform samples in `[-scale, scale)`.
    pub fn random<R: Rng + ?Sized>(shape: Shape, scale: f64, rng: &mut R) -> Self {
        let data = (0..shape.len())
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    /// One channel as a `height * width` slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.shape.plane();
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        ensure_same_shape("dot", self, other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        ensure_same_shape("add_assign", self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Channels `start..start + count` as a new tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Tensor> {
        if start + count > self.shape.channels {
            return Err(Error::InvalidInput(format!(
                "channel slice {start}..{} out of range for {}",
                start + count,
                self.shape
            )));
        }
        let plane = self.shape.plane();
        let shape = Shape::new(count, self.shape.height, self.shape.width);
        Ok(Tensor {
            shape,
            data: self.data[start * plane..(start + count) * plane].to_vec(),
        })
    }
}

pub(crate) fn ensure_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape,
            right: b.shape,
        });
    }
    Ok(())
}

/// Stacks `a` and `b` along the channel axis, `a` first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: a.shape,
            right: b.shape,
        });
    }
    let shape = Shape::new(a.channels() + b.channels(), a.height(), a.width());
    let mut data = Vec::with_capacity(shape.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(Tensor { shape, data })
}

/// Splits the cotangent of a concatenation back into its two parts.
pub fn concat_channels_backward(a_channels: usize, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let b_channels = grad_out
        .channels()
        .checked_sub(a_channels)
        .ok_or_else(|| Error::InvalidInput("concat split exceeds channel count".into()))?;
    Ok((
        grad_out.slice_channels(0, a_channels)?,
        grad_out.slice_channels(a_channels, b_channels)?,
    ))
}

pub fn add_elementwise(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

/// Addition is a pass-through for the cotangent on both sides.
pub fn add_elementwise_backward(grad_out: &Tensor) -> (Tensor, Tensor) {
    (grad_out.clone(), grad_out.clone())
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| v.max(0.0))
}

/// Gradient of [`relu`] given its input; the subgradient at 0 is 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    ensure_same_shape("relu_backward", input, grad_out)?;
    let data = input
        .data
        .iter()
        .zip(&grad_out.data)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor {
        shape: input.shape,
        data,
    })
}

/// A learnable weight array with its gradient accumulator.
///
/// Conv kernels use the `[out, in, kh, kw]` layout; biases are `[out, 1, 1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    dims: [usize; 4],
    value: Vec<f64>,
    grad: Vec<f64>,
}

impl Param {
    pub fn zeros(dims: [usize; 4]) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_values(dims: [usize; 4], value: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if value.len() != n {
            return Err(Error::InvalidInput(format!(
                "param {dims:?} needs {n} values, got {}",
                value.len()
            )));
        }
        Ok(Self {
            dims,
            value,
            grad: vec![0.0; n],
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut [f64] {
        &mut self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Plain SGD: `value -= lr * grad`. Gradients are left untouched.
pub fn sgd_step<'a>(params: impl IntoIterator<Item = &'a mut Param>, lr: f64) {
    for p in params {
        for (v, g) in p.value.iter_mut().zip(&p.grad) {
            *v -= lr * g;
        }
    }
}

pub fn zero_grads<'a>(params: impl IntoIterator<Item = &'a mut Param>) {
    for p in params {
        p.zero_grad();
    }
}
