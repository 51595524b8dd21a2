use rand::Rng;

use crate::error::Result;
use crate::tensor::{relu, relu_backward, Conv2d, Param, Tensor};

/// Residual block of three convolutions (1x1, 1x1, 3x3) with a skip
/// connection: `relu(conv3(relu(conv2(relu(conv1(x))))) + skip(x))`.
///
/// The skip is the identity when input and output widths agree, otherwise a
/// learned 1x1 projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
    pub proj: Option<Conv2d>,
}

/// Intermediates kept by [`ResidualBlock::forward_cached`].
#[derive(Debug, Clone)]
pub struct BlockCache {
    input: Tensor,
    pre1: Tensor,
    act1: Tensor,
    pre2: Tensor,
    act2: Tensor,
    pre_out: Tensor,
}

fn min_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

impl BlockCache {
    /// Smallest distance of any ReLU input in the block from zero.
    pub fn relu_margin(&self) -> f64 {
        min_abs(&self.pre1).min(min_abs(&self.pre2)).min(min_abs(&self.pre_out))
    }
}

pub(crate) fn min_abs_of(t: &Tensor) -> f64 {
    min_abs(t)
}

impl ResidualBlock {
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize) -> Self {
        Self {
            conv1: Conv2d::new(format!("{prefix}.conv1"), in_channels, out_channels, 1),
            conv2: Conv2d::new(format!("{prefix}.conv2"), out_channels, out_channels, 1),
            conv3: Conv2d::new(format!("{prefix}.conv3"), out_channels, out_channels, 3),
            proj: (in_channels != out_channels)
                .then(|| Conv2d::new(format!("{prefix}.proj"), in_channels, out_channels, 1)),
        }
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for conv in self.layers_mut() {
            conv.init_uniform(1.0, rng);
        }
    }

    /// The three convolutions of the block body.
    pub fn body(&self) -> [&Conv2d; 3] {
        [&self.conv1, &self.conv2, &self.conv3]
    }

    /// Body convolutions, then the projection if there is one.
    pub fn layers(&self) -> impl Iterator<Item = &Conv2d> {
        self.body().into_iter().chain(self.proj.as_ref())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Conv2d> {
        [&mut self.conv1, &mut self.conv2, &mut self.conv3]
            .into_iter()
            .chain(self.proj.as_mut())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.layers_mut().flat_map(|c| c.params_mut())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, BlockCache)> {
        let pre1 = self.conv1.forward(x)?;
        let act1 = relu(&pre1);
        let pre2 = self.conv2.forward(&act1)?;
        let act2 = relu(&pre2);
        let mut pre_out = self.conv3.forward(&act2)?;
        match &self.proj {
            Some(p) => pre_out.add_assign(&p.forward(x)?)?,
            None => pre_out.add_assign(x)?,
        }
        let out = relu(&pre_out);
        let cache = BlockCache {
            input: x.clone(),
            pre1,
            act1,
            pre2,
            act2,
            pre_out,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(&mut self, cache: &BlockCache, grad_out: &Tensor) -> Result<Tensor> {
        let g_sum = relu_backward(&cache.pre_out, grad_out)?;
        let mut g_in = match &mut self.proj {
            Some(p) => p.backward(&cache.input, &g_sum)?,
            None => g_sum.clone(),
        };
        let g_act2 = self.conv3.backward(&cache.act2, &g_sum)?;
        let g_pre2 = relu_backward(&cache.pre2, &g_act2)?;
        let g_act1 = self.conv2.backward(&cache.act1, &g_pre2)?;
        let g_pre1 = relu_backward(&cache.pre1, &g_act1)?;
        g_in.add_assign(&self.conv1.backward(&cache.input, &g_pre1)?)?;
        Ok(g_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeroed_body_is_identity_on_nonnegative_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut block = ResidualBlock::new("eb", 4, 4);
        block.init(&mut rng);
        for conv in [&mut block.conv1, &mut block.conv2, &mut block.conv3] {
            conv.weight.value_mut().iter_mut().for_each(|v| *v = 0.0);
            conv.bias.value_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::random(Shape::new(4, 5, 5), 1.0, &mut rng).map(f64::abs);
        assert_eq!(block.forward(&x).unwrap(), x);
    }

    #[test]
    fn projection_only_when_widths_differ() {
        assert!(ResidualBlock::new("a", 4, 4).proj.is_none());
        let b = ResidualBlock::new("b", 8, 4);
        assert_eq!(b.proj.as_ref().unwrap().name, "b.proj");
        assert_eq!(b.layers().count(), 4);
    }
}
