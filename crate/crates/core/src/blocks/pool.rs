//! 2x2 max pooling with stride 2.

use ndarray::Array4;

use super::param::Real;
use crate::{Error, Result};

/// Records which of the four window positions won (`dy*2 + dx`); ties break
/// toward the first position in scan order, keeping the backward scatter
/// deterministic.
#[derive(Debug)]
pub struct PoolCache {
    pub argmax: Array4<u8>,
    pub in_dim: (usize, usize, usize, usize),
}

pub fn max_pool2<F: Real>(x: &Array4<F>) -> Result<(Array4<F>, PoolCache)> {
    let (n, c, h, w) = x.dim();
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::ShapeMismatch {
            expected: "even, non-zero spatial dims".into(),
            actual: format!("{h}x{w}"),
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Array4::zeros((n, c, ho, wo));
    let mut argmax = Array4::zeros((n, c, ho, wo));
    let xs = x.as_slice().expect("contiguous");
    let ys = y.as_slice_mut().expect("contiguous");
    let arg = argmax.as_slice_mut().expect("contiguous");
    for p in 0..n * c {
        let plane = &xs[p * h * w..(p + 1) * h * w];
        let out = &mut ys[p * ho * wo..(p + 1) * ho * wo];
        let oarg = &mut arg[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            let r0 = &plane[2 * oy * w..(2 * oy + 1) * w];
            let r1 = &plane[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..wo {
                let cand = [r0[2 * ox], r0[2 * ox + 1], r1[2 * ox], r1[2 * ox + 1]];
                let mut best = 0u8;
                for k in 1..4 {
                    if cand[k as usize] > cand[best as usize] {
                        best = k;
                    }
                }
                out[oy * wo + ox] = cand[best as usize];
                oarg[oy * wo + ox] = best;
            }
        }
    }
    Ok((y, PoolCache { argmax, in_dim: (n, c, h, w) }))
}

pub fn max_pool2_backward<F: Real>(cache: &PoolCache, gy: &Array4<F>) -> Array4<F> {
    let (n, c, h, w) = cache.in_dim;
    let (_, _, ho, wo) = gy.dim();
    assert_eq!(gy.dim(), (n, c, h / 2, w / 2), "gradient shape mismatch");
    let mut gx = Array4::zeros((n, c, h, w));
    let gxs = gx.as_slice_mut().expect("contiguous");
    let gys = gy.as_slice().expect("contiguous");
    let arg = cache.argmax.as_slice().expect("contiguous");
    for p in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let k = arg[p * ho * wo + oy * wo + ox] as usize;
                let (dy, dx) = (k / 2, k % 2);
                gxs[p * h * w + (2 * oy + dy) * w + 2 * ox + dx] =
                    gys[p * ho * wo + oy * wo + ox];
            }
        }
    }
    gx
}
