//! Backward bilinear warping: `out(c, p) = feature(c, p + flow(p))`, zero
//! outside the grid.

use super::FlowMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The four integer taps and weights of a bilinear sample at `(sx, sy)`.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    x0: isize,
    y0: isize,
    wx: f64,
    wy: f64,
}

impl Stencil {
    #[inline]
    fn at(sx: f64, sy: f64) -> Self {
        let fx = sx.floor();
        let fy = sy.floor();
        Self {
            x0: fx as isize,
            y0: fy as isize,
            wx: sx - fx,
            wy: sy - fy,
        }
    }

    /// `(dx, dy, weight)` for the four corners.
    #[inline]
    fn taps(&self) -> [(isize, isize, f64); 4] {
        let (wx, wy) = (self.wx, self.wy);
        [
            (0, 0, (1.0 - wx) * (1.0 - wy)),
            (1, 0, wx * (1.0 - wy)),
            (0, 1, (1.0 - wx) * wy),
            (1, 1, wx * wy),
        ]
    }
}

#[inline]
fn fetch(plane: &[f64], w: usize, h: usize, x: isize, y: isize) -> f64 {
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        0.0
    } else {
        plane[y as usize * w + x as usize]
    }
}

fn check(feature: &Tensor, flow: &FlowMap) -> Result<()> {
    if flow.height() != feature.height() || flow.width() != feature.width() {
        return Err(Error::ShapeMismatch {
            op: "bilinear_warp",
            left: feature.shape(),
            right: flow.as_tensor().shape(),
        });
    }
    Ok(())
}

pub fn bilinear_warp(feature: &Tensor, flow: &FlowMap) -> Result<Tensor> {
    check(feature, flow)?;
    let (h, w) = (feature.height(), feature.width());
    let mut out = Tensor::zeros(feature.shape());
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.at(y, x);
            let st = Stencil::at(x as f64 + dx, y as f64 + dy);
            let taps = st.taps();
            for c in 0..feature.channels() {
                let plane = feature.channel(c);
                // -0.0 is the exact additive identity; zero-weight taps are
                // skipped so integer flows copy values bit for bit
                let mut v = -0.0;
                for &(ox, oy, wt) in &taps {
                    if wt != 0.0 {
                        v += wt * fetch(plane, w, h, st.x0 + ox, st.y0 + oy);
                    }
                }
                out.set(c, y, x, v);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`bilinear_warp`] with respect to the source features and
/// the flow. At integer sample coordinates the flow gradient is the one
/// of the cell whose lower corner is the sample point.
pub fn bilinear_warp_backward(feature: &Tensor, flow: &FlowMap, grad_out: &Tensor) -> Result<(Tensor, FlowMap)> {
    check(feature, flow)?;
    if grad_out.shape() != feature.shape() {
        return Err(Error::ShapeMismatch {
            op: "bilinear_warp_backward",
            left: feature.shape(),
            right: grad_out.shape(),
        });
    }
    let (h, w) = (feature.height(), feature.width());
    let mut grad_feature = Tensor::zeros(feature.shape());
    let mut grad_flow = FlowMap::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.at(y, x);
            let st = Stencil::at(x as f64 + dx, y as f64 + dy);
            let taps = st.taps();
            let (mut gdx, mut gdy) = (0.0, 0.0);
            for c in 0..feature.channels() {
                let g = grad_out.get(c, y, x);
                if g == 0.0 {
                    continue;
                }
                let plane = feature.channel(c);
                let f00 = fetch(plane, w, h, st.x0, st.y0);
                let f10 = fetch(plane, w, h, st.x0 + 1, st.y0);
                let f01 = fetch(plane, w, h, st.x0, st.y0 + 1);
                let f11 = fetch(plane, w, h, st.x0 + 1, st.y0 + 1);
                gdx += g * ((1.0 - st.wy) * (f10 - f00) + st.wy * (f11 - f01));
                gdy += g * ((1.0 - st.wx) * (f01 - f00) + st.wx * (f11 - f10));

                let gplane = grad_feature.channel_mut(c);
                for &(ox, oy, wt) in &taps {
                    let (sx, sy) = (st.x0 + ox, st.y0 + oy);
                    if sx >= 0 && sy >= 0 && sx < w as isize && sy < h as isize {
                        gplane[sy as usize * w + sx as usize] += wt * g;
                    }
                }
            }
            grad_flow.set(y, x, gdx, gdy);
        }
    }
    Ok((grad_feature, grad_flow))
}
