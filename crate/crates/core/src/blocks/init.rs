//! Weight initialization.
//!
//! All layers draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; biases start at
//! zero. Samples are drawn in `f64` and then cast, so an `f32` and an `f64`
//! model built from the same seed agree to `f32` precision.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::param::{Param, Real};

pub fn fan_in_uniform<F: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Param<F> {
    assert!(fan_in > 0, "fan_in must be positive");
    let bound = 1.0 / (fan_in as f64).sqrt();
    let value = ArrayD::from_shape_simple_fn(IxDyn(shape), || {
        F::of(rng.random_range(-bound..bound))
    });
    Param::new(value)
}

pub fn zeros<F: Real>(shape: &[usize]) -> Param<F> {
    Param::new(ArrayD::zeros(IxDyn(shape)))
}
