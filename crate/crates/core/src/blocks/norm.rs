//! Instance and batch normalization.
//!
//! Both share the affine form `y = gamma * xhat + beta`; they differ in the
//! group the statistics are taken over (one `(n, c)` plane vs. a whole
//! channel). Statistics use population variance and accumulate in `f64`.

use ndarray::{Array1, Array2, Array4, ArrayD};

use super::param::{path, Param, Params, Real};
use crate::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn check_channels<F: Real>(x: &Array4<F>, c_expected: usize) -> Result<()> {
    let c = x.dim().1;
    if c != c_expected {
        return Err(Error::ShapeMismatch {
            expected: format!("{c_expected} channels"),
            actual: format!("{c}"),
        });
    }
    Ok(())
}

fn plane_stats<F: Real>(plane: &[F]) -> (f64, f64) {
    let m = plane.len() as f64;
    let mut sum = 0.0;
    for v in plane {
        sum += v.f64();
    }
    let mean = sum / m;
    let mut var = 0.0;
    for v in plane {
        let d = v.f64() - mean;
        var += d * d;
    }
    (mean, var / m)
}

/// Shared backward step for one normalization group.
///
/// With `xhat = (x - mean) * inv_std` and `y = gamma * xhat + beta`, the
/// input gradient is
/// `gx = gamma * inv_std * (gy - mean(gy) - xhat * mean(gy * xhat))`.
fn norm_group_backward<F: Real>(
    gy: &[F],
    xhat: &[F],
    gx: &mut [F],
    gamma: f64,
    inv_std: f64,
) -> (f64, f64) {
    let m = gy.len() as f64;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (g, xh) in gy.iter().zip(xhat.iter()) {
        s1 += g.f64();
        s2 += g.f64() * xh.f64();
    }
    let k = gamma * inv_std;
    let (m1, m2) = (s1 / m, s2 / m);
    for ((g, xh), out) in gy.iter().zip(xhat.iter()).zip(gx.iter_mut()) {
        *out = F::of(k * (g.f64() - m1 - xh.f64() * m2));
    }
    (s1, s2)
}

#[derive(Debug, Clone)]
pub struct InstanceNorm2d<F: Real> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
}

#[derive(Debug)]
pub struct InstanceNormCache<F: Real> {
    pub xhat: Array4<F>,
    pub inv_std: Array2<f64>,
}

impl<F: Real> InstanceNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        InstanceNorm2d {
            gamma: Param::new(ArrayD::from_elem(vec![channels], F::one())),
            beta: Param::new(ArrayD::zeros(vec![channels])),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Instance statistics are per-sample, so inference and training share
    /// this path; the cache is simply dropped at inference.
    pub fn forward_t(&self, x: Array4<F>) -> Result<(Array4<F>, InstanceNormCache<F>)> {
        check_channels(&x, self.channels())?;
        let (n, c, h, w) = x.dim();
        let mut xhat = x;
        let mut inv_std = Array2::zeros((n, c));
        let gamma = self.gamma.value.as_slice().expect("contiguous");
        let beta = self.beta.value.as_slice().expect("contiguous");
        let mut y = Array4::zeros((n, c, h, w));
        {
            let xs = xhat.as_slice_mut().expect("contiguous");
            let ys = y.as_slice_mut().expect("contiguous");
            for ni in 0..n {
                for ci in 0..c {
                    let p = ni * c + ci;
                    let plane = &mut xs[p * h * w..(p + 1) * h * w];
                    let (mean, var) = plane_stats(plane);
                    let is = 1.0 / (var + NORM_EPS).sqrt();
                    inv_std[[ni, ci]] = is;
                    let (g, b) = (gamma[ci].f64(), beta[ci].f64());
                    for (v, out) in plane.iter_mut().zip(ys[p * h * w..].iter_mut()) {
                        let xh = (v.f64() - mean) * is;
                        *v = F::of(xh);
                        *out = F::of(g * xh + b);
                    }
                }
            }
        }
        Ok((y, InstanceNormCache { xhat, inv_std }))
    }

    pub fn forward(&self, x: &Array4<F>) -> Result<Array4<F>> {
        let (y, _) = self.forward_t(x.clone())?;
        Ok(y)
    }

    pub fn backward(&mut self, cache: &InstanceNormCache<F>, gy: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = cache.xhat.dim();
        assert_eq!(gy.dim(), (n, c, h, w), "gradient shape mismatch");
        let mut gx = Array4::zeros((n, c, h, w));
        let gys = gy.as_slice().expect("contiguous");
        let xhs = cache.xhat.as_slice().expect("contiguous");
        let gxs = gx.as_slice_mut().expect("contiguous");
        let gamma = self.gamma.value.as_slice().expect("contiguous");
        let gg = self.gamma.grad.as_slice_mut().expect("contiguous");
        let gb = self.beta.grad.as_slice_mut().expect("contiguous");
        for ni in 0..n {
            for ci in 0..c {
                let p = ni * c + ci;
                let span = p * h * w..(p + 1) * h * w;
                let (s1, s2) = norm_group_backward(
                    &gys[span.clone()],
                    &xhs[span.clone()],
                    &mut gxs[span],
                    gamma[ci].f64(),
                    cache.inv_std[[ni, ci]],
                );
                gg[ci] = gg[ci] + F::of(s2);
                gb[ci] = gb[ci] + F::of(s1);
            }
        }
        gx
    }
}

impl<F: Real> Params<F> for InstanceNorm2d<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        f(path(prefix, "gamma"), &mut self.gamma);
        f(path(prefix, "beta"), &mut self.beta);
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<F: Real> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: ArrayD<F>,
    pub running_var: ArrayD<F>,
}

#[derive(Debug)]
pub struct BatchNormCache<F: Real> {
    pub xhat: Array4<F>,
    pub inv_std: Array1<f64>,
}

impl<F: Real> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(ArrayD::from_elem(vec![channels], F::one())),
            beta: Param::new(ArrayD::zeros(vec![channels])),
            running_mean: ArrayD::zeros(vec![channels]),
            running_var: ArrayD::from_elem(vec![channels], F::one()),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Training forward: normalizes with batch statistics and folds them
    /// into the running estimates.
    pub fn forward_t(&mut self, x: Array4<F>) -> Result<(Array4<F>, BatchNormCache<F>)> {
        check_channels(&x, self.channels())?;
        let (n, c, h, w) = x.dim();
        let mut xhat = x;
        let mut inv_std = Array1::zeros(c);
        let mut y = Array4::zeros((n, c, h, w));
        let gamma = self.gamma.value.as_slice().expect("contiguous");
        let beta = self.beta.value.as_slice().expect("contiguous");
        let rm = self.running_mean.as_slice_mut().expect("contiguous");
        let rv = self.running_var.as_slice_mut().expect("contiguous");
        let m = (n * h * w) as f64;
        {
            let xs = xhat.as_slice_mut().expect("contiguous");
            let ys = y.as_slice_mut().expect("contiguous");
            for ci in 0..c {
                let mut sum = 0.0;
                for ni in 0..n {
                    let p = (ni * c + ci) * h * w;
                    for v in &xs[p..p + h * w] {
                        sum += v.f64();
                    }
                }
                let mean = sum / m;
                let mut var = 0.0;
                for ni in 0..n {
                    let p = (ni * c + ci) * h * w;
                    for v in &xs[p..p + h * w] {
                        let d = v.f64() - mean;
                        var += d * d;
                    }
                }
                let var = var / m;
                rm[ci] = F::of((1.0 - BN_MOMENTUM) * rm[ci].f64() + BN_MOMENTUM * mean);
                rv[ci] = F::of((1.0 - BN_MOMENTUM) * rv[ci].f64() + BN_MOMENTUM * var);
                let is = 1.0 / (var + NORM_EPS).sqrt();
                inv_std[ci] = is;
                let (g, b) = (gamma[ci].f64(), beta[ci].f64());
                for ni in 0..n {
                    let p = (ni * c + ci) * h * w;
                    for (v, out) in xs[p..p + h * w].iter_mut().zip(ys[p..p + h * w].iter_mut()) {
                        let xh = (v.f64() - mean) * is;
                        *v = F::of(xh);
                        *out = F::of(g * xh + b);
                    }
                }
            }
        }
        Ok((y, BatchNormCache { xhat, inv_std }))
    }

    /// Inference forward using the running statistics.
    pub fn forward(&self, x: &Array4<F>) -> Result<Array4<F>> {
        check_channels(x, self.channels())?;
        let (n, c, h, w) = x.dim();
        let mut y = Array4::zeros((n, c, h, w));
        let gamma = self.gamma.value.as_slice().expect("contiguous");
        let beta = self.beta.value.as_slice().expect("contiguous");
        let rm = self.running_mean.as_slice().expect("contiguous");
        let rv = self.running_var.as_slice().expect("contiguous");
        let xs = x.as_slice().expect("contiguous");
        let ys = y.as_slice_mut().expect("contiguous");
        for ci in 0..c {
            let is = 1.0 / (rv[ci].f64() + NORM_EPS).sqrt();
            let (g, b) = (gamma[ci].f64(), beta[ci].f64());
            let mean = rm[ci].f64();
            for ni in 0..n {
                let p = (ni * c + ci) * h * w;
                for (v, out) in xs[p..p + h * w].iter().zip(ys[p..p + h * w].iter_mut()) {
                    *out = F::of(g * (v.f64() - mean) * is + b);
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, cache: &BatchNormCache<F>, gy: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = cache.xhat.dim();
        assert_eq!(gy.dim(), (n, c, h, w), "gradient shape mismatch");
        let mut gx = Array4::zeros((n, c, h, w));
        let gamma = self.gamma.value.as_slice().expect("contiguous");
        let gg = self.gamma.grad.as_slice_mut().expect("contiguous");
        let gbeta = self.beta.grad.as_slice_mut().expect("contiguous");
        let gys = gy.as_slice().expect("contiguous");
        let xhs = cache.xhat.as_slice().expect("contiguous");
        let gxs = gx.as_slice_mut().expect("contiguous");
        let m = (n * h * w) as f64;
        for ci in 0..c {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for ni in 0..n {
                let p = (ni * c + ci) * h * w;
                for (g, xh) in gys[p..p + h * w].iter().zip(xhs[p..p + h * w].iter()) {
                    s1 += g.f64();
                    s2 += g.f64() * xh.f64();
                }
            }
            let k = gamma[ci].f64() * cache.inv_std[ci];
            let (m1, m2) = (s1 / m, s2 / m);
            for ni in 0..n {
                let p = (ni * c + ci) * h * w;
                for ((g, xh), out) in gys[p..p + h * w]
                    .iter()
                    .zip(xhs[p..p + h * w].iter())
                    .zip(gxs[p..p + h * w].iter_mut())
                {
                    *out = F::of(k * (g.f64() - m1 - xh.f64() * m2));
                }
            }
            gg[ci] = gg[ci] + F::of(s2);
            gbeta[ci] = gbeta[ci] + F::of(s1);
        }
        gx
    }
}

impl<F: Real> Params<F> for BatchNorm2d<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        f(path(prefix, "gamma"), &mut self.gamma);
        f(path(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        f(path(prefix, "running_mean"), &mut self.running_mean);
        f(path(prefix, "running_var"), &mut self.running_var);
    }
}
