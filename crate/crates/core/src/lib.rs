//! Multi-view cardiac MR segmentation toolkit.
//!
//! The pipeline mirrors a multi-view acquisition and segmentation workflow:
//!
//! 1. **phantom** — synthetic left-ventricle subjects: a truncated-ellipsoid
//!    myocardium shell rasterized into a short-axis stack and three long-axis
//!    views, with ground-truth masks that are geometrically consistent across
//!    views.
//! 2. **geometry** — plane algebra: LA/SA intersection centering, ROI crops,
//!    cross-view label consistency, apex/mid/base slice stratification.
//! 3. **datastore** — bit-exact on-disk formats for datasets, shape-code
//!    caches and checkpoints.
//! 4. **blocks** — differentiable building blocks (conv, norm, residual
//!    blocks, losses) with hand-written backward passes and a
//!    finite-difference gradient checker.
//! 5. **shape_mae** — the multi-view shape autoencoder: four per-view
//!    encoders into a sigmoid-bounded latent code, six per-view decoders,
//!    and the composite intra/inter/regularizer loss.
//! 6. **mv_unet** — a filter-reduced U-Net whose bottleneck ingests the four
//!    shape codes through a fuse block; doubles as the plain 2D U-Net
//!    baseline when fusion is disabled.
//! 7. **metrics** — Dice and millimeter Hausdorff distance with stratified
//!    reporting.
//! 8. **trainer** — reproducible training loops and the data-fraction
//!    experiment matrix.

pub mod blocks;
pub mod config;
pub mod datastore;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod mv_unet;
pub mod phantom;
pub mod shape_mae;
pub mod trainer;

pub use error::{Error, Result};
