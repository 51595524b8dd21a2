//! Adaptive temporal fusion of the current feature map with warped
//! neighbour maps.
//!
//! At every position `p` each member `m` (the current map first, then the
//! neighbours in order) gets the weight `softmax_m(cos(F_m(p), F_cur(p)))`,
//! with the current map's self-similarity fixed at 1 and any cosine against a
//! zero vector taken as 0. The output is the weighted sum of member vectors.

use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationInput {
    pub current: Tensor,
    pub warped_neighbors: Vec<Tensor>,
}

impl AggregationInput {
    pub fn new(current: Tensor, warped_neighbors: Vec<Tensor>) -> Result<Self> {
        let input = Self {
            current,
            warped_neighbors,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> Result<()> {
        for n in &self.warped_neighbors {
            ensure_same_shape("aggregate", &self.current, n)?;
        }
        Ok(())
    }

    pub fn members(&self) -> impl Iterator<Item = &Tensor> {
        std::iter::once(&self.current).chain(&self.warped_neighbors)
    }

    pub fn len(&self) -> usize {
        1 + self.warped_neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Feature vector of `t` at plane offset `p`.
fn vector(t: &Tensor, p: usize, out: &mut Vec<f64>) {
    let plane = t.shape().plane();
    out.clear();
    out.extend((0..t.channels()).map(|c| t.data()[c * plane + p]));
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Per-position similarity scores: `[1, cos(n_1, cur), cos(n_2, cur), ...]`.
fn scores_at(input: &AggregationInput, p: usize, cur: &mut Vec<f64>, buf: &mut Vec<f64>) -> Vec<f64> {
    vector(&input.current, p, cur);
    let mut scores = Vec::with_capacity(input.len());
    scores.push(1.0);
    for n in &input.warped_neighbors {
        vector(n, p, buf);
        scores.push(cosine(buf, cur));
    }
    scores
}

/// One single-channel weight map per member, current first.
pub fn adaptive_weights(input: &AggregationInput) -> Result<Vec<Tensor>> {
    input.validate()?;
    let shape = input.current.shape();
    let map_shape = crate::error::Shape::new(1, shape.height, shape.width);
    let mut maps = vec![Tensor::zeros(map_shape); input.len()];
    let (mut cur, mut buf) = (Vec::new(), Vec::new());
    for p in 0..shape.plane() {
        let w = softmax(&scores_at(input, p, &mut cur, &mut buf));
        for (map, wm) in maps.iter_mut().zip(w) {
            map.data_mut()[p] = wm;
        }
    }
    Ok(maps)
}

pub fn aggregate(input: &AggregationInput) -> Result<Tensor> {
    let weights = adaptive_weights(input)?;
    let shape = input.current.shape();
    let plane = shape.plane();
    let mut out = Tensor::zeros(shape);
    for (member, w) in input.members().zip(&weights) {
        for c in 0..shape.channels {
            let src = member.channel(c);
            let dst = &mut out.data_mut()[c * plane..(c + 1) * plane];
            for p in 0..plane {
                dst[p] += w.data()[p] * src[p];
            }
        }
    }
    Ok(out)
}

/// Gradients of [`aggregate`]: `(grad_current, grad_neighbors)`.
///
/// The cosine against a zero vector is treated as a constant, so it
/// contributes no gradient.
pub fn aggregate_backward(input: &AggregationInput, grad_out: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    input.validate()?;
    if grad_out.shape() != input.current.shape() {
        return Err(Error::ShapeMismatch {
            op: "aggregate_backward",
            left: input.current.shape(),
            right: grad_out.shape(),
        });
    }
    let shape = input.current.shape();
    let plane = shape.plane();
    let members: Vec<&Tensor> = input.members().collect();
    let mut grads: Vec<Tensor> = members.iter().map(|_| Tensor::zeros(shape)).collect();
    let (mut cur, mut buf, mut g) = (Vec::new(), Vec::new(), Vec::new());
    let mut vecs: Vec<Vec<f64>> = vec![Vec::new(); members.len()];

    for p in 0..plane {
        let w = softmax(&scores_at(input, p, &mut cur, &mut buf));
        vector(grad_out, p, &mut g);
        for (v, m) in vecs.iter_mut().zip(&members) {
            vector(m, p, v);
        }
        // out = sum_m w_m v_m
        //   d/dv_m (direct)    = w_m g
        //   d/dw_m             = <g, v_m>
        //   d/ds_k via softmax = w_k (d/dw_k - sum_m w_m d/dw_m)
        let gw: Vec<f64> = vecs.iter().map(|v| dot(&g, v)).collect();
        let mean_gw: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
        for (m, grad) in grads.iter_mut().enumerate() {
            for c in 0..shape.channels {
                grad.data_mut()[c * plane + p] += w[m] * g[c];
            }
        }
        let cur_vec = &vecs[0];
        let n_cur = dot(cur_vec, cur_vec).sqrt();
        for k in 1..members.len() {
            let gs = w[k] * (gw[k] - mean_gw);
            let nb = &vecs[k];
            let n_nb = dot(nb, nb).sqrt();
            if gs == 0.0 || n_cur == 0.0 || n_nb == 0.0 {
                continue;
            }
            let cos = dot(nb, cur_vec) / (n_nb * n_cur);
            // d cos / d a = b / (|a||b|) - cos * a / |a|^2
            for c in 0..shape.channels {
                let d_nb = cur_vec[c] / (n_nb * n_cur) - cos * nb[c] / (n_nb * n_nb);
                let d_cur = nb[c] / (n_nb * n_cur) - cos * cur_vec[c] / (n_cur * n_cur);
                grads[k].data_mut()[c * plane + p] += gs * d_nb;
                grads[0].data_mut()[c * plane + p] += gs * d_cur;
            }
        }
    }
    let current = grads.remove(0);
    Ok((current, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_neighbors_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cur = Tensor::random(Shape::new(3, 4, 4), 1.0, &mut rng);
        let input = AggregationInput::new(cur.clone(), vec![]).unwrap();
        let w = adaptive_weights(&input).unwrap();
        assert!(w[0].data().iter().all(|&v| v == 1.0));
        assert_eq!(aggregate(&input).unwrap(), cur);
    }

    #[test]
    fn identical_neighbor_halves_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cur = Tensor::random(Shape::new(3, 4, 4), 1.0, &mut rng);
        let input = AggregationInput::new(cur.clone(), vec![cur.clone()]).unwrap();
        for map in adaptive_weights(&input).unwrap() {
            for &v in map.data() {
                assert!((v - 0.5).abs() < 1e-15);
            }
        }
        let out = aggregate(&input).unwrap();
        for (a, b) in out.data().iter().zip(cur.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn orthogonal_neighbor_weights() {
        let cur = Tensor::from_vec(Shape::new(2, 1, 1), vec![1.0, 0.0]).unwrap();
        let nb = Tensor::from_vec(Shape::new(2, 1, 1), vec![0.0, 3.0]).unwrap();
        let w = adaptive_weights(&AggregationInput::new(cur, vec![nb]).unwrap()).unwrap();
        let e = std::f64::consts::E;
        assert!((w[0].data()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((w[1].data()[0] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((w[0].data()[0] - 0.731).abs() < 1e-3);
    }

    #[test]
    fn zero_vector_neighbor_scores_zero() {
        let cur = Tensor::from_vec(Shape::new(2, 1, 1), vec![1.0, 1.0]).unwrap();
        let nb = Tensor::zeros(Shape::new(2, 1, 1));
        let w = adaptive_weights(&AggregationInput::new(cur, vec![nb]).unwrap()).unwrap();
        let e = std::f64::consts::E;
        assert!((w[1].data()[0] - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cur = Tensor::zeros(Shape::new(2, 3, 3));
        assert!(AggregationInput::new(cur, vec![Tensor::zeros(Shape::new(2, 3, 4))]).is_err());
    }
}
