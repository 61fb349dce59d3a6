//! Differentiable building blocks.
//!
//! A small, hand-verified layer zoo on `ndarray`: convolutions lowered to
//! GEMM, normalization, pooling, activations, softmax cross-entropy, Adam,
//! and a finite-difference gradient checker. Everything is generic over the
//! scalar so the same code trains in `f32` and is certified in `f64`.

pub mod act;
pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod norm;
pub mod param;
pub mod pool;
pub mod res;
pub mod rng;

pub use act::{sigmoid, ActCache, Activation, LEAKY_SLOPE};
pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use conv::{Conv2d, Conv2dCache, ConvTranspose2d, ConvTranspose2dCache};
pub use gradcheck::{GradCheck, GradCheckReport};
pub use loss::{cross_entropy, cross_entropy_batch, softmax_channels};
pub use norm::{BatchNorm2d, BatchNormCache, InstanceNorm2d, InstanceNormCache, BN_MOMENTUM, NORM_EPS};
pub use param::{param_count, param_names, path, zero_grads, Dtype, Param, Params, Real};
pub use pool::{max_pool2, max_pool2_backward, PoolCache};
pub use res::{ResBlock, ResBlockCache};
pub use rng::{derive_seed, stream, stream_n};
