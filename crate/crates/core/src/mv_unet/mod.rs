//! Prior-injected segmentation network and its plain 2D baseline.
//!
//! The MV U-Net is a filter-reduced U-Net whose bottleneck receives the four
//! shape codes through a fuse block; disabling the fuse yields the baseline
//! 2D U-Net with an identical trunk.

mod net;

pub use net::{FuseBlock, MvUnet, MvUnetCache, MvUnetSpec, DOWN_FACTOR, NUM_CLASSES};

use ndarray::{Array2, Array3, Array4, Axis};

use crate::blocks::{Params, Real};
use crate::shape_mae::{SOURCE_VIEWS, VIEW_NAMES};
use crate::{Error, Result};

/// Total elements across convolution kernels, excluding biases and
/// normalization parameters.
pub fn count_conv_weights<F: Real>(model: &mut dyn Params<F>) -> usize {
    let mut total = 0;
    model.visit_params("", &mut |name, p| {
        if name == "weight" || name.ends_with(".weight") {
            total += p.len();
        }
    });
    total
}

/// Reshapes one subject's `(4, latent_dim)` codes into the fuse input
/// `(4·latent_channels, s, s)`; channel order LA1, LA2, LA3, Mid-V.
pub fn fused_priors<F: Real>(codes: &Array2<F>, latent_channels: usize) -> Result<Array3<F>> {
    let (views, d) = codes.dim();
    if views != SOURCE_VIEWS {
        return Err(Error::InvalidInput(if views < SOURCE_VIEWS {
            format!("missing shape code for view {}", VIEW_NAMES[views])
        } else {
            format!("expected {SOURCE_VIEWS} view codes, got {views}")
        }));
    }
    if latent_channels == 0 || d % latent_channels != 0 {
        return Err(Error::InvalidInput(format!(
            "{d}-d codes do not split into {latent_channels} channels"
        )));
    }
    let hw = d / latent_channels;
    let sp = (hw as f64).sqrt().round() as usize;
    if sp * sp != hw {
        return Err(Error::InvalidInput(format!(
            "{d}-d codes do not form a square {latent_channels}-channel grid"
        )));
    }
    if codes
        .iter()
        .any(|v| !v.is_finite() || *v < F::zero() || *v > F::one())
    {
        return Err(Error::InvalidInput("shape codes must lie in [0, 1]".into()));
    }
    let mut out = Array3::zeros((SOURCE_VIEWS * latent_channels, sp, sp));
    for v in 0..SOURCE_VIEWS {
        for c in 0..latent_channels {
            for y in 0..sp {
                for x in 0..sp {
                    // Codes flatten channel-major on the encoder side.
                    out[[v * latent_channels + c, y, x]] = codes[[v, (c * sp + y) * sp + x]];
                }
            }
        }
    }
    Ok(out)
}

/// Stacks per-subject code matrices into an `(n, 4·latent_channels, s, s)`
/// prior batch.
pub fn fused_priors_batch<F: Real>(
    codes: &[Array2<F>],
    latent_channels: usize,
) -> Result<Array4<F>> {
    if codes.is_empty() {
        return Err(Error::InvalidInput("empty priors batch".into()));
    }
    let first = fused_priors(&codes[0], latent_channels)?;
    let (c, h, w) = first.dim();
    let mut out = Array4::zeros((codes.len(), c, h, w));
    out.index_axis_mut(Axis(0), 0).assign(&first);
    for (b, m) in codes.iter().enumerate().skip(1) {
        let p = fused_priors(m, latent_channels)?;
        if p.dim() != (c, h, w) {
            return Err(Error::ShapeMismatch {
                expected: format!("({c}, {h}, {w}) priors"),
                actual: format!("{:?}", p.dim()),
            });
        }
        out.index_axis_mut(Axis(0), b).assign(&p);
    }
    Ok(out)
}
