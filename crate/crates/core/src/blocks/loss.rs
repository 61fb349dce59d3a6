//! Softmax cross-entropy over the channel axis, averaged per pixel.

use ndarray::{Array2, Array3, Array4};

use super::param::Real;
use crate::{Error, Result};

/// Channel-wise softmax, shifted by the per-pixel max so exponentials never
/// overflow.
pub fn softmax_channels<F: Real>(logits: &Array4<F>) -> Array4<F> {
    let (n, c, h, w) = logits.dim();
    let mut out = logits.clone();
    let s = out.as_slice_mut().expect("contiguous");
    let hw = h * w;
    for ni in 0..n {
        let base = ni * c * hw;
        for p in 0..hw {
            let mut m = f64::NEG_INFINITY;
            for ci in 0..c {
                m = m.max(s[base + ci * hw + p].f64());
            }
            let mut z = 0.0;
            for ci in 0..c {
                z += (s[base + ci * hw + p].f64() - m).exp();
            }
            for ci in 0..c {
                let e = (s[base + ci * hw + p].f64() - m).exp();
                s[base + ci * hw + p] = F::of(e / z);
            }
        }
    }
    out
}

/// Mean per-pixel cross-entropy and its gradient with respect to the logits.
/// `targets` holds class indices; the gradient is `(softmax - onehot) / M`
/// where `M` counts every pixel in the batch.
pub fn cross_entropy_batch<F: Real>(
    logits: &Array4<F>,
    targets: &Array3<u8>,
) -> Result<(f64, Array4<F>)> {
    let (n, c, h, w) = logits.dim();
    if targets.dim() != (n, h, w) {
        return Err(Error::ShapeMismatch {
            expected: format!("targets ({n}, {h}, {w})"),
            actual: format!("{:?}", targets.dim()),
        });
    }
    if n * h * w == 0 {
        return Err(Error::InvalidInput("empty batch in cross-entropy".into()));
    }
    let mut grad = Array4::zeros((n, c, h, w));
    let ls = logits.as_slice().expect("contiguous");
    let ts = targets.as_slice().expect("contiguous");
    let gs = grad.as_slice_mut().expect("contiguous");
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut total = 0.0;
    for ni in 0..n {
        let base = ni * c * hw;
        for p in 0..hw {
            let t = ts[ni * hw + p] as usize;
            if t >= c {
                return Err(Error::InvalidInput(format!(
                    "target class {t} out of range for {c} channels"
                )));
            }
            let mut mx = f64::NEG_INFINITY;
            for ci in 0..c {
                mx = mx.max(ls[base + ci * hw + p].f64());
            }
            let mut z = 0.0;
            for ci in 0..c {
                z += (ls[base + ci * hw + p].f64() - mx).exp();
            }
            let lse = mx + z.ln();
            total += lse - ls[base + t * hw + p].f64();
            for ci in 0..c {
                let soft = (ls[base + ci * hw + p].f64() - mx).exp() / z;
                let onehot = if ci == t { 1.0 } else { 0.0 };
                gs[base + ci * hw + p] = F::of((soft - onehot) / m);
            }
        }
    }
    let mean = total / m;
    if !mean.is_finite() {
        return Err(Error::InvalidInput("non-finite cross-entropy".into()));
    }
    Ok((mean, grad))
}

/// Single-image convenience wrapper: logits `(c, h, w)` against an `(h, w)`
/// class map.
pub fn cross_entropy<F: Real>(logits: &Array3<F>, target: &Array2<u8>) -> Result<f64> {
    let (c, h, w) = logits.dim();
    let l4 = logits
        .to_shape((1, c, h, w))
        .map_err(|_| Error::InvalidInput("non-contiguous logits".into()))?
        .to_owned();
    let t3 = target
        .to_shape((1, h, w))
        .map_err(|_| Error::InvalidInput("non-contiguous target".into()))?
        .to_owned();
    cross_entropy_batch(&l4, &t3).map(|(loss, _)| loss)
}
