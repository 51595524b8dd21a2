//! 2-D convolution (cross-correlation, as in every deep-learning framework)
//! with zero padding, direct loops over the kernel footprint.

use rand::Rng;

use super::{Param, Tensor};
use crate::error::{Error, Result, Shape};

fn output_extent(input: usize, kernel: usize, pad: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn check_conv(input: &Tensor, weight: &Param, bias: &Param, pad: usize, stride: usize) -> Result<Shape> {
    let [out_c, in_c, kh, kw] = weight.dims();
    if in_c != input.channels() {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input.shape(),
            right: Shape::new(in_c, kh, kw),
        });
    }
    if bias.dims() != [out_c, 1, 1, 1] {
        let [b0, b1, b2, _] = bias.dims();
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: Shape::new(out_c, 1, 1),
            right: Shape::new(b0, b1, b2),
        });
    }
    match (
        output_extent(input.height(), kh, pad, stride),
        output_extent(input.width(), kw, pad, stride),
    ) {
        (Some(oh), Some(ow)) => Ok(Shape::new(out_c, oh, ow)),
        _ => Err(Error::InvalidConfig(format!(
            "conv2d: kernel {kh}x{kw} with pad {pad} stride {stride} does not fit input {}",
            input.shape()
        ))),
    }
}

/// Range of output columns whose input column `ox * stride + kx - pad` is in bounds.
#[inline]
fn valid_range(out_len: usize, in_len: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    // ox * stride + k >= pad  and  ox * stride + k < in_len + pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if in_len + pad > k {
        ((in_len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv2d_forward(input: &Tensor, weight: &Param, bias: &Param, pad: usize, stride: usize) -> Result<Tensor> {
    let out_shape = check_conv(input, weight, bias, pad, stride)?;
    let [out_c, in_c, kh, kw] = weight.dims();
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = (out_shape.height, out_shape.width);
    let mut out = Tensor::zeros(out_shape);
    let wv = weight.value();

    for oc in 0..out_c {
        let plane = out.channel_mut(oc);
        plane.iter_mut().for_each(|v| *v = bias.value()[oc]);
        for ic in 0..in_c {
            let src = input.channel(ic);
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(oh, h, ky, pad, stride);
                for kx in 0..kw {
                    let k = wv[((oc * in_c + ic) * kh + ky) * kw + kx];
                    let (ox_lo, ox_hi) = valid_range(ow, w, kx, pad, stride);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let row = &src[iy * w..(iy + 1) * w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let off = kx as isize - pad as isize;
                            for ox in ox_lo..ox_hi {
                                dst[ox] += k * row[(ox as isize + off) as usize];
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst[ox] += k * row[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns the input gradient and accumulates into `weight.grad` and `bias.grad`.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &mut Param,
    bias: &mut Param,
    grad_out: &Tensor,
    pad: usize,
    stride: usize,
) -> Result<Tensor> {
    let out_shape = check_conv(input, weight, bias, pad, stride)?;
    if grad_out.shape() != out_shape {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: out_shape,
            right: grad_out.shape(),
        });
    }
    let [out_c, in_c, kh, kw] = weight.dims();
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = (out_shape.height, out_shape.width);
    let mut grad_in = Tensor::zeros(input.shape());

    for oc in 0..out_c {
        let g = grad_out.channel(oc);
        bias.grad_mut()[oc] += g.iter().sum::<f64>();
        for ic in 0..in_c {
            let src = input.channel(ic);
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(oh, h, ky, pad, stride);
                for kx in 0..kw {
                    let widx = ((oc * in_c + ic) * kh + ky) * kw + kx;
                    let k = weight.value()[widx];
                    let (ox_lo, ox_hi) = valid_range(ow, w, kx, pad, stride);
                    let mut acc = 0.0;
                    let gin = grad_in.channel_mut(ic);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let grow = &g[oy * ow..(oy + 1) * ow];
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kx - pad;
                            acc += src[iy * w + ix] * grow[ox];
                            gin[iy * w + ix] += k * grow[ox];
                        }
                    }
                    weight.grad_mut()[widx] += acc;
                }
            }
        }
    }
    Ok(grad_in)
}

/// A named convolution layer: kernel, bias and geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub weight: Param,
    pub bias: Param,
    pub pad: usize,
    pub stride: usize,
}

impl Conv2d {
    /// Zero-initialized layer with "same" padding for odd kernels at stride 1.
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            name: name.into(),
            weight: Param::zeros([out_channels, in_channels, kernel, kernel]),
            bias: Param::zeros([out_channels, 1, 1, 1]),
            pad: kernel / 2,
            stride: 1,
        }
    }

    /// Glorot-uniform kernel scaled by `gain`, zero bias.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, gain: f64, rng: &mut R) {
        let [out_c, in_c, kh, kw] = self.weight.dims();
        let fan_in = (in_c * kh * kw) as f64;
        let fan_out = (out_c * kh * kw) as f64;
        let a = (6.0 / (fan_in + fan_out)).sqrt();
        for v in self.weight.value_mut() {
            *v = gain * rng.random_range(-a..=a);
        }
        self.bias.value_mut().iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        conv2d_forward(input, &self.weight, &self.bias, self.pad, self.stride)
    }

    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        conv2d_backward(input, &mut self.weight, &mut self.bias, grad_out, self.pad, self.stride)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
