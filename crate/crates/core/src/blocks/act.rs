//! Elementwise activations.

use ndarray::Array4;

use super::param::Real;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Negative inputs pass through scaled by [`LEAKY_SLOPE`].
    LeakyRelu,
    Sigmoid,
}

/// Backward state: rectifiers only need the sign of the input; the sigmoid
/// keeps its output (`dy/dx = y * (1 - y)`).
#[derive(Debug)]
pub enum ActCache<F: Real> {
    Positive(Vec<bool>),
    Output(Array4<F>),
}

impl Activation {
    pub fn forward<F: Real>(self, x: &mut Array4<F>) {
        let slope = F::of(LEAKY_SLOPE);
        match self {
            Activation::Relu => x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() }),
            Activation::LeakyRelu => {
                x.mapv_inplace(|v| if v > F::zero() { v } else { v * slope })
            }
            Activation::Sigmoid => x.mapv_inplace(sigmoid),
        }
    }

    pub fn forward_t<F: Real>(self, mut x: Array4<F>) -> (Array4<F>, ActCache<F>) {
        match self {
            Activation::Relu | Activation::LeakyRelu => {
                let mask = x.iter().map(|&v| v > F::zero()).collect();
                self.forward(&mut x);
                (x, ActCache::Positive(mask))
            }
            Activation::Sigmoid => {
                self.forward(&mut x);
                (x.clone(), ActCache::Output(x))
            }
        }
    }

    pub fn backward<F: Real>(self, cache: &ActCache<F>, gy: &Array4<F>) -> Array4<F> {
        let slope = F::of(LEAKY_SLOPE);
        match (self, cache) {
            (Activation::Relu, ActCache::Positive(mask)) => {
                let mut gx = gy.clone();
                for (g, &pos) in gx.iter_mut().zip(mask.iter()) {
                    if !pos {
                        *g = F::zero();
                    }
                }
                gx
            }
            (Activation::LeakyRelu, ActCache::Positive(mask)) => {
                let mut gx = gy.clone();
                for (g, &pos) in gx.iter_mut().zip(mask.iter()) {
                    if !pos {
                        *g = *g * slope;
                    }
                }
                gx
            }
            (Activation::Sigmoid, ActCache::Output(y)) => {
                let mut gx = gy.clone();
                for (g, &yv) in gx.iter_mut().zip(y.iter()) {
                    *g = *g * yv * (F::one() - yv);
                }
                gx
            }
            _ => panic!("activation/cache kind mismatch"),
        }
    }
}

pub fn sigmoid<F: Real>(v: F) -> F {
    // Split on sign so the exponential never overflows.
    if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}
