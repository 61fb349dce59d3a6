//! Trainable parameters and the visitor used by optimizers, checkpoints and
//! the gradient checker.

use ndarray::{ArrayD, ScalarOperand};
use num_traits::Float;

/// Scalar type for network math. Training runs in `f32`; verification
/// (finite-difference checks) runs the same code in `f64`.
///
/// The conversion methods avoid the `num_traits` names (`to_f64`,
/// `from_f64`) so calls never need disambiguation.
pub trait Real:
    Float
    + ScalarOperand
    + ndarray::LinalgScalar
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

/// Element type tag used by the checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<F: Real> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Real> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything holding trainable parameters. Visit order must be fixed per
/// architecture: it defines optimizer-state and checkpoint layout.
pub trait Params<F: Real> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>));

    /// Non-trainable state carried in checkpoints (e.g. batch-norm running
    /// statistics).
    fn visit_buffers(&mut self, _prefix: &str, _f: &mut dyn FnMut(String, &mut ArrayD<F>)) {}
}

pub fn zero_grads<F: Real>(model: &mut dyn Params<F>) {
    model.visit_params("", &mut |_, p| p.zero_grad());
}

pub fn param_names<F: Real>(model: &mut dyn Params<F>) -> Vec<String> {
    let mut names = Vec::new();
    model.visit_params("", &mut |name, _| names.push(name));
    names
}

pub fn param_count<F: Real>(model: &mut dyn Params<F>) -> usize {
    let mut n = 0;
    model.visit_params("", &mut |_, p| n += p.len());
    n
}

/// Joins a visitor prefix with a field name.
pub fn path(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}
