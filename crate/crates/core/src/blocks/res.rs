//! Channel-preserving residual block: `y = x + conv2(act(norm(conv1(x))))`.
//!
//! `conv2` starts at zero, so a freshly built block is the identity map and
//! the residual branch fades in during training.

use ndarray::Array4;
use rand_chacha::ChaCha8Rng;

use super::act::{ActCache, Activation};
use super::conv::{Conv2d, Conv2dCache};
use super::norm::{InstanceNorm2d, InstanceNormCache};
use super::param::{path, Param, Params, Real};
use crate::Result;

#[derive(Debug, Clone)]
pub struct ResBlock<F: Real> {
    pub conv1: Conv2d<F>,
    pub norm: InstanceNorm2d<F>,
    pub act: Activation,
    pub conv2: Conv2d<F>,
}

#[derive(Debug)]
pub struct ResBlockCache<F: Real> {
    c1: Conv2dCache<F>,
    n1: InstanceNormCache<F>,
    a1: ActCache<F>,
    c2: Conv2dCache<F>,
}

impl<F: Real> ResBlock<F> {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, act: Activation) -> Self {
        ResBlock {
            conv1: Conv2d::new(rng, channels, channels, 3, 1, 1),
            norm: InstanceNorm2d::new(channels),
            act,
            conv2: Conv2d::zeros(channels, channels, 3, 1, 1),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn weight_count(&self) -> usize {
        self.conv1.weight_count() + self.conv2.weight_count()
    }

    pub fn forward(&self, x: &Array4<F>) -> Result<Array4<F>> {
        let h = self.conv1.forward(x)?;
        let mut h = self.norm.forward(&h)?;
        self.act.forward(&mut h);
        let h = self.conv2.forward(&h)?;
        Ok(x + &h)
    }

    pub fn forward_t(&self, x: Array4<F>) -> Result<(Array4<F>, ResBlockCache<F>)> {
        let (h, c1) = self.conv1.forward_t(x)?;
        let (h, n1) = self.norm.forward_t(h)?;
        let (h, a1) = self.act.forward_t(h);
        let (h, c2) = self.conv2.forward_t(h)?;
        let y = &c1.x + &h;
        Ok((y, ResBlockCache { c1, n1, a1, c2 }))
    }

    pub fn backward(&mut self, cache: &ResBlockCache<F>, gy: &Array4<F>) -> Array4<F> {
        let g = self.conv2.backward(&cache.c2, gy);
        let g = self.act.backward(&cache.a1, &g);
        let g = self.norm.backward(&cache.n1, &g);
        let g = self.conv1.backward(&cache.c1, &g);
        g + gy
    }
}

impl<F: Real> Params<F> for ResBlock<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        self.conv1.visit_params(&path(prefix, "conv1"), f);
        self.norm.visit_params(&path(prefix, "norm"), f);
        self.conv2.visit_params(&path(prefix, "conv2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn fresh_block_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let block: ResBlock<f32> = ResBlock::new(&mut rng, 4, Activation::LeakyRelu);
        let x = Array4::from_shape_simple_fn((2, 4, 6, 6), || rng.random_range(-1.0f32..1.0));
        let y = block.forward(&x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut block: ResBlock<f64> = ResBlock::new(&mut rng, 2, Activation::LeakyRelu);
        // Give the zero-initialized branch some signal so its grads are live.
        block
            .conv2
            .weight
            .value
            .mapv_inplace(|_| rng.random_range(-0.3..0.3));
        let x = Array4::from_shape_simple_fn((1, 2, 4, 4), || rng.random_range(-1.0..1.0));
        let proj = Array4::from_shape_simple_fn((1, 2, 4, 4), || rng.random_range(-1.0..1.0));
        let loss =
            |b: &ResBlock<f64>, x: &Array4<f64>| -> f64 { (&b.forward(x).unwrap() * &proj).sum() };

        let (_, cache) = block.forward_t(x.clone()).unwrap();
        let gx = block.backward(&cache, &proj);

        let eps = 1e-6;
        for idx in [[0, 0, 0, 0], [0, 1, 3, 2]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&block, &xp) - loss(&block, &xm)) / (2.0 * eps);
            assert_abs_diff_eq!(gx[idx], fd, epsilon = 1e-6);
        }
        for idx in [[0usize, 1, 0, 1], [1, 0, 2, 2]] {
            let orig = block.conv1.weight.value[idx];
            block.conv1.weight.value[idx] = orig + eps;
            let lp = loss(&block, &x);
            block.conv1.weight.value[idx] = orig - eps;
            let lm = loss(&block, &x);
            block.conv1.weight.value[idx] = orig;
            assert_abs_diff_eq!(
                block.conv1.weight.grad[idx],
                (lp - lm) / (2.0 * eps),
                epsilon = 1e-6
            );
        }
        let orig = block.norm.gamma.value[[1]];
        block.norm.gamma.value[[1]] = orig + eps;
        let lp = loss(&block, &x);
        block.norm.gamma.value[[1]] = orig - eps;
        let lm = loss(&block, &x);
        block.norm.gamma.value[[1]] = orig;
        assert_abs_diff_eq!(
            block.norm.gamma.grad[[1]],
            (lp - lm) / (2.0 * eps),
            epsilon = 1e-6
        );
    }

    #[test]
    fn param_paths_are_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut block: ResBlock<f32> = ResBlock::new(&mut rng, 2, Activation::Relu);
        let names = super::super::param::param_names(&mut block);
        assert_eq!(
            names,
            vec![
                "conv1.weight",
                "conv1.bias",
                "norm.gamma",
                "norm.beta",
                "conv2.weight",
                "conv2.bias"
            ]
        );
    }
}
