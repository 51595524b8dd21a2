use crate::error::{Error, Result};
use crate::flow::FlowMap;
use crate::tensor::{ensure_same_shape, Tensor};

fn interior(height: usize, width: usize, border: usize) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    if 2 * border >= height || 2 * border >= width {
        return Err(Error::InvalidInput(format!(
            "border {border} leaves no interior in a {height}x{width} grid"
        )));
    }
    Ok((border..height - border, border..width - border))
}

/// Mean Euclidean distance between predicted and ground-truth flow vectors,
/// ignoring a frame of `border` cells.
pub fn endpoint_error(pred: &FlowMap, gt: &FlowMap, border: usize) -> Result<f64> {
    ensure_same_shape("endpoint_error", pred.as_tensor(), gt.as_tensor())?;
    let (ys, xs) = interior(pred.height(), pred.width(), border)?;
    let count = ys.len() * xs.len();
    let mut total = 0.0;
    for y in ys {
        for x in xs.clone() {
            let (px, py) = pred.at(y, x);
            let (gx, gy) = gt.at(y, x);
            total += (px - gx).hypot(py - gy);
        }
    }
    Ok(total / count as f64)
}

/// Mean squared difference over all channels, ignoring a `border`-cell frame.
pub fn interior_mse(a: &Tensor, b: &Tensor, border: usize) -> Result<f64> {
    ensure_same_shape("interior_mse", a, b)?;
    let (ys, xs) = interior(a.height(), a.width(), border)?;
    let count = a.channels() * ys.len() * xs.len();
    let mut total = 0.0;
    for c in 0..a.channels() {
        for y in ys.clone() {
            for x in xs.clone() {
                let d = a.get(c, y, x) - b.get(c, y, x);
                total += d * d;
            }
        }
    }
    Ok(total / count as f64)
}
