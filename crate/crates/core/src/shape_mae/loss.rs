//! Composite autoencoder loss: `total = L_intra + alpha * L_inter + beta * L_reg`.
//!
//! With 4 source views and 6 target views there are 24 cross-entropy pairs:
//! the 4 with matching source and target make up `L_intra`, the other 20
//! `L_inter` (the apical/basal SA targets have no paired encoder, so all
//! their pairs are inter). Both are sums over pairs, not means. `L_reg`
//! pulls each subject's four codes toward their mean.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use super::{SOURCE_VIEWS, TARGET_VIEWS};
use crate::blocks::{cross_entropy_batch, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.5,
            beta: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub intra: f64,
    pub inter: f64,
    pub reg: f64,
    pub intra_terms: usize,
    pub inter_terms: usize,
}

impl LossBreakdown {
    pub fn compose(intra: f64, inter: f64, reg: f64, w: &LossWeights, terms: (usize, usize)) -> Self {
        LossBreakdown {
            total: intra + w.alpha * inter + w.beta * reg,
            intra,
            inter,
            reg,
            intra_terms: terms.0,
            inter_terms: terms.1,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.intra.is_finite()
            && self.inter.is_finite()
            && self.reg.is_finite()
    }
}

/// Loss over precomputed predictions, `preds[i * 6 + j]` holding decoder
/// `j`'s logits from encoder `i`'s code.
pub fn shape_mae_loss<F: Real>(
    preds: &[Array4<F>],
    targets: &[Array3<u8>; TARGET_VIEWS],
    codes: &[Array2<F>; SOURCE_VIEWS],
    w: &LossWeights,
) -> Result<LossBreakdown> {
    if preds.len() != SOURCE_VIEWS * TARGET_VIEWS {
        return Err(Error::InvalidInput(format!(
            "expected {} predictions, got {}",
            SOURCE_VIEWS * TARGET_VIEWS,
            preds.len()
        )));
    }
    let mut intra = 0.0;
    let mut inter = 0.0;
    let mut terms = (0, 0);
    for i in 0..SOURCE_VIEWS {
        for j in 0..TARGET_VIEWS {
            let (ce, _) = cross_entropy_batch(&preds[i * TARGET_VIEWS + j], &targets[j])?;
            if i == j {
                intra += ce;
                terms.0 += 1;
            } else {
                inter += ce;
                terms.1 += 1;
            }
        }
    }
    let reg = code_regularizer(codes)?;
    Ok(LossBreakdown::compose(intra, inter, reg, w, terms))
}

/// Batch-mean code regularizer: per subject, `(1/4) * sum_i ||z_i - zbar||^2`
/// with `zbar` the mean over the four views. Accumulates in `f64`.
pub fn code_regularizer<F: Real>(codes: &[Array2<F>; SOURCE_VIEWS]) -> Result<f64> {
    let (n, _) = check_codes(codes)?;
    let mut total = 0.0;
    for b in 0..n {
        for d in 0..codes[0].ncols() {
            let vals = [
                codes[0][[b, d]].f64(),
                codes[1][[b, d]].f64(),
                codes[2][[b, d]].f64(),
                codes[3][[b, d]].f64(),
            ];
            let mean = vals.iter().sum::<f64>() / 4.0;
            total += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        }
    }
    Ok(total / n as f64)
}

/// Regularizer value and its gradient per view: `(z_i - zbar) / (2 n)`
/// (the cross terms through `zbar` cancel because the residuals sum to zero).
pub fn code_regularizer_grads<F: Real>(
    codes: &[Array2<F>; SOURCE_VIEWS],
) -> Result<(f64, [Array2<F>; SOURCE_VIEWS])> {
    let (n, dim) = check_codes(codes)?;
    let reg = code_regularizer(codes)?;
    let scale = F::of(1.0 / (2.0 * n as f64));
    let mut zbar: Array2<F> = Array2::zeros((n, dim));
    for c in codes {
        zbar.scaled_add(F::of(0.25), c);
    }
    let grads = [
        (&codes[0] - &zbar) * scale,
        (&codes[1] - &zbar) * scale,
        (&codes[2] - &zbar) * scale,
        (&codes[3] - &zbar) * scale,
    ];
    Ok((reg, grads))
}

fn check_codes<F: Real>(codes: &[Array2<F>; SOURCE_VIEWS]) -> Result<(usize, usize)> {
    let (n, dim) = codes[0].dim();
    if n == 0 {
        return Err(Error::InvalidInput("empty code batch".into()));
    }
    for c in codes.iter().skip(1) {
        if c.dim() != (n, dim) {
            return Err(Error::ShapeMismatch {
                expected: format!("codes ({n}, {dim})"),
                actual: format!("{:?}", c.dim()),
            });
        }
    }
    Ok((n, dim))
}
