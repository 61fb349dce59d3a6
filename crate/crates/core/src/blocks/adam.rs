//! Adam optimizer.
//!
//! State is positional: slot `i` belongs to the `i`-th parameter in the
//! model's visit order, with names recorded once and checked on every step.

use ndarray::ArrayD;

use super::param::{Params, Real};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam<F: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<ArrayD<F>>,
    pub v: Vec<ArrayD<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            names: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the gradients currently stored in the model.
    /// Gradients are left untouched; callers zero them before the next
    /// accumulation.
    pub fn step(&mut self, model: &mut dyn Params<F>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let names = &mut self.names;
        let ms = &mut self.m;
        let vs = &mut self.v;
        let mut idx = 0usize;
        model.visit_params("", &mut |name, p| {
            if idx == ms.len() {
                names.push(name.clone());
                ms.push(ArrayD::zeros(p.value.raw_dim()));
                vs.push(ArrayD::zeros(p.value.raw_dim()));
            }
            assert_eq!(names[idx], name, "optimizer state out of sync with model");
            let m = ms[idx].as_slice_mut().expect("contiguous");
            let v = vs[idx].as_slice_mut().expect("contiguous");
            let val = p.value.as_slice_mut().expect("contiguous");
            let grad = p.grad.as_slice().expect("contiguous");
            for i in 0..val.len() {
                let g = grad[i].f64();
                let mi = b1 * m[i].f64() + (1.0 - b1) * g;
                let vi = b2 * v[i].f64() + (1.0 - b2) * g * g;
                m[i] = F::of(mi);
                v[i] = F::of(vi);
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                val[i] = F::of(val[i].f64() - update);
            }
            idx += 1;
        });
        assert_eq!(idx, ms.len(), "model shrank under the optimizer");
    }
}
