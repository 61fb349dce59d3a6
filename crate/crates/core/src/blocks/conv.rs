//! 2-D convolution and transposed convolution.
//!
//! Forward and backward both lower to matrix products: patches are gathered
//! into a column matrix (`im2col`) and multiplied against the reshaped
//! kernel. The backward pass scatters the column gradient back (`col2im`)
//! and accumulates weight gradients with a rank-update GEMM.

use ndarray::{linalg::general_mat_mul, Array2, Array4, ArrayView2, ArrayViewMut2, Axis};
use rand_chacha::ChaCha8Rng;

use super::init;
use super::param::{path, Param, Params, Real};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Conv2d<F: Real> {
    /// `(out_channels, in_channels, k, k)`
    pub weight: Param<F>,
    /// `(out_channels,)`
    pub bias: Param<F>,
    pub stride: usize,
    pub pad: usize,
}

/// Input retained for the backward pass.
#[derive(Debug)]
pub struct Conv2dCache<F: Real> {
    pub x: Array4<F>,
}

impl<F: Real> Conv2d<F> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = in_ch * k * k;
        Conv2d {
            weight: init::fan_in_uniform(rng, &[out_ch, in_ch, k, k], fan_in),
            bias: init::zeros(&[out_ch]),
            stride,
            pad,
        }
    }

    /// All-zero kernel and bias; the layer maps everything to zero.
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            weight: init::zeros(&[out_ch, in_ch, k, k]),
            bias: init::zeros(&[out_ch]),
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn weight_count(&self) -> usize {
        self.weight.len()
    }

    fn out_spatial(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        if h + 2 * self.pad < k || w + 2 * self.pad < k {
            return Err(Error::ShapeMismatch {
                expected: format!("spatial dims >= {k} (after padding {})", self.pad),
                actual: format!("{h}x{w}"),
            });
        }
        Ok((
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        ))
    }

    fn check_input(&self, x: &Array4<F>) -> Result<(usize, usize)> {
        let (_, c, h, w) = x.dim();
        if c != self.in_channels() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input channels", self.in_channels()),
                actual: format!("{c}"),
            });
        }
        self.out_spatial(h, w)
    }

    pub fn forward(&self, x: &Array4<F>) -> Result<Array4<F>> {
        let (ho, wo) = self.check_input(x)?;
        let (n, c, h, w) = x.dim();
        let (o, k) = (self.out_channels(), self.kernel());
        let patch = c * k * k;
        let mut out = Array4::zeros((n, o, ho, wo));
        let mut col = Array2::zeros((patch, ho * wo));
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((o, patch))
            .expect("contiguous weight");
        for i in 0..n {
            im2col(
                x.index_axis(Axis(0), i).to_slice().expect("contiguous"),
                (c, h, w),
                k,
                self.stride,
                self.pad,
                (ho, wo),
                col.as_slice_mut().expect("contiguous"),
            );
            let mut y2 = out
                .index_axis_mut(Axis(0), i)
                .into_shape_with_order((o, ho * wo))
                .expect("contiguous output");
            general_mat_mul(F::one(), &w2, &col.view(), F::zero(), &mut y2);
            add_bias(&mut y2, &self.bias.value.as_slice().expect("contiguous"));
        }
        Ok(out)
    }

    pub fn forward_t(&self, x: Array4<F>) -> Result<(Array4<F>, Conv2dCache<F>)> {
        let y = self.forward(&x)?;
        Ok((y, Conv2dCache { x }))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &Conv2dCache<F>, gy: &Array4<F>) -> Array4<F> {
        self.backward_impl(cache, gy, true)
            .expect("input gradient requested")
    }

    /// Parameter gradients only; for the first layer of a network, where no
    /// input gradient is needed.
    pub fn backward_params_only(&mut self, cache: &Conv2dCache<F>, gy: &Array4<F>) {
        self.backward_impl(cache, gy, false);
    }

    fn backward_impl(
        &mut self,
        cache: &Conv2dCache<F>,
        gy: &Array4<F>,
        need_gx: bool,
    ) -> Option<Array4<F>> {
        let x = &cache.x;
        let (n, c, h, w) = x.dim();
        let (o, k) = (self.out_channels(), self.kernel());
        let (_, go, ho, wo) = gy.dim();
        assert_eq!(go, o, "gradient channel mismatch");
        let patch = c * k * k;
        let mut gx = need_gx.then(|| Array4::zeros((n, c, h, w)));
        let mut col = Array2::zeros((patch, ho * wo));
        let mut gcol = Array2::zeros((patch, ho * wo));
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((o, patch))
            .expect("contiguous weight");
        let mut gw2 = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((o, patch))
            .expect("contiguous weight grad");
        let gb = self.bias.grad.as_slice_mut().expect("contiguous");
        for i in 0..n {
            im2col(
                x.index_axis(Axis(0), i).to_slice().expect("contiguous"),
                (c, h, w),
                k,
                self.stride,
                self.pad,
                (ho, wo),
                col.as_slice_mut().expect("contiguous"),
            );
            let gy2 = gy
                .index_axis(Axis(0), i)
                .into_shape_with_order((o, ho * wo))
                .expect("contiguous grad");
            general_mat_mul(F::one(), &gy2, &col.t(), F::one(), &mut gw2);
            if let Some(gx) = gx.as_mut() {
                general_mat_mul(F::one(), &w2.t(), &gy2, F::zero(), &mut gcol.view_mut());
                col2im_add(
                    gcol.as_slice().expect("contiguous"),
                    (c, h, w),
                    k,
                    self.stride,
                    self.pad,
                    (ho, wo),
                    gx.index_axis_mut(Axis(0), i)
                        .into_slice()
                        .expect("contiguous"),
                );
            }
            for (oc, row) in gy2.outer_iter().enumerate() {
                gb[oc] = gb[oc] + row.sum();
            }
        }
        gx
    }
}

impl<F: Real> Params<F> for Conv2d<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        f(path(prefix, "weight"), &mut self.weight);
        f(path(prefix, "bias"), &mut self.bias);
    }
}

fn add_bias<F: Real>(y: &mut ArrayViewMut2<F>, bias: &[F]) {
    for (o, mut row) in y.outer_iter_mut().enumerate() {
        let b = bias[o];
        row.mapv_inplace(|v| v + b);
    }
}

/// Ceiling division for a possibly negative numerator, positive divisor.
fn ceil_div(a: isize, b: isize) -> isize {
    if a >= 0 {
        (a + b - 1) / b
    } else {
        -((-a) / b)
    }
}

/// Output-column range `[lo, hi)` whose input column `ox*stride + kx - pad`
/// lands inside `[0, w)`.
fn valid_ox(kx: usize, stride: usize, pad: usize, w: usize, wo: usize) -> (usize, usize) {
    let (kx, s, pad, w) = (kx as isize, stride as isize, pad as isize, w as isize);
    let lo = ceil_div(pad - kx, s).clamp(0, wo as isize);
    let hi = ceil_div(w + pad - kx, s).clamp(lo, wo as isize);
    (lo as usize, hi as usize)
}

/// Gathers `k x k` patches of `x` (one image, `(c, h, w)` C-order slice) into
/// `col` with shape `(c*k*k, ho*wo)`. Out-of-bounds taps read as zero.
fn im2col<F: Real>(
    x: &[F],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    col: &mut [F],
) {
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * ho * wo;
                let (lo, hi) = valid_ox(kx, stride, pad, w, wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let seg = &mut col[row + oy * wo..row + (oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        seg.fill(F::zero());
                        continue;
                    }
                    let xrow = &plane[iy as usize * w..(iy as usize + 1) * w];
                    seg[..lo].fill(F::zero());
                    seg[hi..].fill(F::zero());
                    let src = (lo * stride + kx) as isize - pad as isize;
                    let src = src as usize;
                    if stride == 1 {
                        seg[lo..hi].copy_from_slice(&xrow[src..src + (hi - lo)]);
                    } else {
                        for (slot, &v) in seg[lo..hi]
                            .iter_mut()
                            .zip(xrow[src..].iter().step_by(stride))
                        {
                            *slot = v;
                        }
                    }
                }
            }
        }
    }
}

/// Scatters a column-matrix gradient back onto the image, accumulating where
/// patches overlap. Exact adjoint of [`im2col`].
fn col2im_add<F: Real>(
    col: &[F],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    gx: &mut [F],
) {
    for ci in 0..c {
        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * ho * wo;
                let (lo, hi) = valid_ox(kx, stride, pad, w, wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let seg = &col[row + oy * wo..row + (oy + 1) * wo];
                    let dst = (lo * stride + kx) as isize - pad as isize;
                    let dst = iy as usize * w + dst as usize;
                    if stride == 1 {
                        for (slot, &g) in plane[dst..dst + (hi - lo)]
                            .iter_mut()
                            .zip(seg[lo..hi].iter())
                        {
                            *slot = *slot + g;
                        }
                    } else {
                        for (slot, &g) in plane[dst..]
                            .iter_mut()
                            .step_by(stride)
                            .zip(seg[lo..hi].iter())
                        {
                            *slot = *slot + g;
                        }
                    }
                }
            }
        }
    }
}

/// Transposed convolution with a fixed `2x2` kernel and stride 2: each input
/// pixel expands into a disjoint `2x2` block, exactly doubling resolution.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F: Real> {
    /// `(in_channels, out_channels, 2, 2)`
    pub weight: Param<F>,
    /// `(out_channels,)`
    pub bias: Param<F>,
}

#[derive(Debug)]
pub struct ConvTranspose2dCache<F: Real> {
    pub x: Array4<F>,
}

impl<F: Real> ConvTranspose2d<F> {
    pub fn new(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize) -> Self {
        ConvTranspose2d {
            weight: init::fan_in_uniform(rng, &[in_ch, out_ch, 2, 2], in_ch),
            bias: init::zeros(&[out_ch]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn weight_count(&self) -> usize {
        self.weight.len()
    }

    fn w2(&self) -> ArrayView2<'_, F> {
        let (ci, co) = (self.in_channels(), self.out_channels());
        self.weight
            .value
            .view()
            .into_shape_with_order((ci, co * 4))
            .expect("contiguous weight")
    }

    pub fn forward(&self, x: &Array4<F>) -> Result<Array4<F>> {
        let (n, c, h, w) = x.dim();
        if c != self.in_channels() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input channels", self.in_channels()),
                actual: format!("{c}"),
            });
        }
        let o = self.out_channels();
        let mut out = Array4::zeros((n, o, 2 * h, 2 * w));
        let mut t = Array2::zeros((o * 4, h * w));
        let w2 = self.w2();
        let bias = self.bias.value.as_slice().expect("contiguous");
        for i in 0..n {
            let x2 = x
                .index_axis(Axis(0), i)
                .into_shape_with_order((c, h * w))
                .expect("contiguous input");
            general_mat_mul(F::one(), &w2.t(), &x2, F::zero(), &mut t.view_mut());
            let ts = t.as_slice().expect("contiguous");
            let os = out
                .index_axis_mut(Axis(0), i)
                .into_slice()
                .expect("contiguous output");
            for oc in 0..o {
                let b = bias[oc];
                for dy in 0..2 {
                    for dx in 0..2 {
                        let trow = &ts[((oc * 2 + dy) * 2 + dx) * h * w..][..h * w];
                        for y in 0..h {
                            let obase = oc * 4 * h * w + (2 * y + dy) * 2 * w + dx;
                            let trow = &trow[y * w..(y + 1) * w];
                            for (xx, &v) in trow.iter().enumerate() {
                                os[obase + 2 * xx] = v + b;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn forward_t(&self, x: Array4<F>) -> Result<(Array4<F>, ConvTranspose2dCache<F>)> {
        let y = self.forward(&x)?;
        Ok((y, ConvTranspose2dCache { x }))
    }

    pub fn backward(&mut self, cache: &ConvTranspose2dCache<F>, gy: &Array4<F>) -> Array4<F> {
        let x = &cache.x;
        let (n, c, h, w) = x.dim();
        let o = self.out_channels();
        assert_eq!(gy.dim(), (n, o, 2 * h, 2 * w), "gradient shape mismatch");
        let mut gx = Array4::zeros((n, c, h, w));
        let mut gt = Array2::zeros((o * 4, h * w));
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((c, o * 4))
            .expect("contiguous weight");
        let mut gw2 = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((c, o * 4))
            .expect("contiguous weight grad");
        let gb = self.bias.grad.as_slice_mut().expect("contiguous");
        for i in 0..n {
            let gys = gy
                .index_axis(Axis(0), i)
                .to_slice()
                .expect("contiguous grad");
            {
                let gts = gt.as_slice_mut().expect("contiguous");
                for oc in 0..o {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let trow = &mut gts[((oc * 2 + dy) * 2 + dx) * h * w..][..h * w];
                            for y in 0..h {
                                let obase = oc * 4 * h * w + (2 * y + dy) * 2 * w + dx;
                                for (xx, slot) in trow[y * w..(y + 1) * w].iter_mut().enumerate() {
                                    *slot = gys[obase + 2 * xx];
                                }
                            }
                        }
                    }
                }
            }
            let x2 = x
                .index_axis(Axis(0), i)
                .into_shape_with_order((c, h * w))
                .expect("contiguous input");
            let mut gx2 = gx
                .index_axis_mut(Axis(0), i)
                .into_shape_with_order((c, h * w))
                .expect("contiguous grad");
            general_mat_mul(F::one(), &w2, &gt.view(), F::zero(), &mut gx2);
            general_mat_mul(F::one(), &x2, &gt.t(), F::one(), &mut gw2);
            for oc in 0..o {
                let mut s = F::zero();
                for r in 0..4 {
                    s = s + gt.row(oc * 4 + r).sum();
                }
                gb[oc] = gb[oc] + s;
            }
        }
        gx
    }
}

impl<F: Real> Params<F> for ConvTranspose2d<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        f(path(prefix, "weight"), &mut self.weight);
        f(path(prefix, "bias"), &mut self.bias);
    }
}
