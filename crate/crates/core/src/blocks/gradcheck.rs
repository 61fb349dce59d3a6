//! Central-difference verification of analytic gradients.
//!
//! The caller populates gradients once (forward + backward), then hands over
//! a loss closure. Each probe perturbs a single parameter element in both
//! directions and compares the finite-difference slope with the stored
//! gradient. Run in `f64`: the difference quotient loses too many digits in
//! `f32` to certify anything.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::param::Params;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub probes: usize,
    pub eps: f64,
    /// Absolute scale below which gradients count as zero; keeps rounding
    /// noise in dead paths from registering as relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            probes: 24,
            eps: 1e-5,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: usize,
    /// `path[index]` of the worst probe.
    pub worst: String,
}

impl GradCheck {
    /// Probes `self.probes` randomly chosen parameter elements.
    pub fn run<M: Params<f64>>(
        &self,
        model: &mut M,
        loss: &mut dyn FnMut(&mut M) -> f64,
    ) -> GradCheckReport {
        let total = super::param::param_count(model);
        assert!(total > 0, "model has no parameters");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let picks: Vec<usize> = (0..self.probes)
            .map(|_| rng.random_range(0..total))
            .collect();
        self.probe_indices(model, loss, &picks)
    }

    /// Probes every parameter element. Only sensible for tiny models.
    pub fn run_exhaustive<M: Params<f64>>(
        &self,
        model: &mut M,
        loss: &mut dyn FnMut(&mut M) -> f64,
    ) -> GradCheckReport {
        let total = super::param::param_count(model);
        let picks: Vec<usize> = (0..total).collect();
        self.probe_indices(model, loss, &picks)
    }

    fn probe_indices<M: Params<f64>>(
        &self,
        model: &mut M,
        loss: &mut dyn FnMut(&mut M) -> f64,
        picks: &[usize],
    ) -> GradCheckReport {
        let mut report = GradCheckReport {
            max_rel_err: 0.0,
            probes: picks.len(),
            worst: String::new(),
        };
        for &flat in picks {
            let (name, elem, analytic) = locate(model, flat);
            let orig = read_value(model, flat);
            write_value(model, flat, orig + self.eps);
            let lp = loss(model);
            write_value(model, flat, orig - self.eps);
            let lm = loss(model);
            write_value(model, flat, orig);
            let fd = (lp - lm) / (2.0 * self.eps);
            let scale = analytic.abs().max(fd.abs()).max(self.floor);
            let rel = (analytic - fd).abs() / scale;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = format!("{name}[{elem}]");
            }
        }
        report
    }
}

fn locate<M: Params<f64>>(model: &mut M, flat: usize) -> (String, usize, f64) {
    let mut remaining = flat;
    let mut out = None;
    model.visit_params("", &mut |name, p| {
        if out.is_some() {
            return;
        }
        if remaining < p.len() {
            let g = p.grad.as_slice().expect("contiguous")[remaining];
            out = Some((name, remaining, g));
        } else {
            remaining -= p.len();
        }
    });
    out.expect("flat index within parameter count")
}

fn read_value<M: Params<f64>>(model: &mut M, flat: usize) -> f64 {
    let mut remaining = flat;
    let mut out = None;
    model.visit_params("", &mut |_, p| {
        if out.is_some() {
            return;
        }
        if remaining < p.len() {
            out = Some(p.value.as_slice().expect("contiguous")[remaining]);
        } else {
            remaining -= p.len();
        }
    });
    out.expect("flat index within parameter count")
}

fn write_value<M: Params<f64>>(model: &mut M, flat: usize, v: f64) {
    let mut remaining = flat;
    let mut done = false;
    model.visit_params("", &mut |_, p| {
        if done {
            return;
        }
        if remaining < p.len() {
            p.value.as_slice_mut().expect("contiguous")[remaining] = v;
            done = true;
        } else {
            remaining -= p.len();
        }
    });
    assert!(done, "flat index within parameter count");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::param::{path, Param};
    use ndarray::ArrayD;

    struct Quad {
        x: Param<f64>,
        y: Param<f64>,
        c: Vec<f64>,
    }

    impl Quad {
        fn loss(&self) -> f64 {
            let mut s = 0.0;
            for (i, v) in self.x.value.iter().enumerate() {
                s += self.c[i] * v * v;
            }
            for (i, v) in self.y.value.iter().enumerate() {
                s += self.c[self.x.value.len() + i] * v * v;
            }
            s
        }

        fn fill_grads(&mut self) {
            for (i, g) in self.x.grad.iter_mut().enumerate() {
                *g = 2.0 * self.c[i] * self.x.value.as_slice().unwrap()[i];
            }
            let off = self.x.value.len();
            for (i, g) in self.y.grad.iter_mut().enumerate() {
                *g = 2.0 * self.c[off + i] * self.y.value.as_slice().unwrap()[i];
            }
        }
    }

    impl Params<f64> for Quad {
        fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<f64>)) {
            f(path(prefix, "x"), &mut self.x);
            f(path(prefix, "y"), &mut self.y);
        }
    }

    fn quad() -> Quad {
        let mut q = Quad {
            x: Param::new(ArrayD::from_shape_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap()),
            y: Param::new(ArrayD::from_shape_vec(vec![2], vec![0.3, 4.0]).unwrap()),
            c: vec![2.0, 0.5, 1.0, 3.0, 0.25],
        };
        q.fill_grads();
        q
    }

    #[test]
    fn exact_gradients_pass() {
        let mut q = quad();
        let report = GradCheck::default().run_exhaustive(&mut q, &mut |m| m.loss());
        assert!(
            report.max_rel_err < 1e-9,
            "rel err {} at {}",
            report.max_rel_err,
            report.worst
        );
        assert_eq!(report.probes, 5);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut q = quad();
        q.y.grad[[1]] += 0.1;
        let report = GradCheck::default().run_exhaustive(&mut q, &mut |m| m.loss());
        assert!(report.max_rel_err > 1e-2);
        assert_eq!(report.worst, "y[1]");
    }

    #[test]
    fn sampling_restores_parameters() {
        let mut q = quad();
        let before = q.x.value.clone();
        GradCheck {
            probes: 50,
            ..GradCheck::default()
        }
        .run(&mut q, &mut |m| m.loss());
        assert_eq!(q.x.value, before);
    }
}
