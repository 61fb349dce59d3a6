//! Multi-view shape autoencoder.
//!
//! Four view-specific encoders compress an LV image into a compact shape
//! code; six decoders reconstruct segmentation masks for the source views
//! plus apical and basal short-axis planes. Training every encoder/decoder
//! pairing pulls the per-view codes toward a shared representation, which
//! downstream segmenters consume as a spatial prior.

mod loss;
mod model;
mod net;

pub use loss::{
    code_regularizer, code_regularizer_grads, shape_mae_loss, LossBreakdown, LossWeights,
};
pub use model::{ForwardAll, ShapeMae, ShapeMaeSpec};
pub use net::{Decoder, Encoder, STAGE_FACTOR};

use std::path::Path;

use ndarray::{s, Array2, Array3, Array4};

use crate::blocks::Real;
use crate::datastore::{read_subject, save_priors, DatasetManifest};
use crate::phantom::Subject;
use crate::{Error, Result};

/// Views with their own encoder: the three LA images plus the mid-V slice.
pub const SOURCE_VIEWS: usize = 4;
/// Decoded masks: the four source views plus apical and basal SA planes.
pub const TARGET_VIEWS: usize = 6;
pub const VIEW_NAMES: [&str; TARGET_VIEWS] = ["LA1", "LA2", "LA3", "Mid-V", "apical SA", "basal SA"];

/// Stacks each subject's source-view images into `(n, 1, h, w)` batches.
pub fn views_batch<F: Real>(subjects: &[&Subject]) -> Result<[Array4<F>; SOURCE_VIEWS]> {
    let n = subjects.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty subject batch".into()));
    }
    let (h, w) = subjects[0].la_images[0].dim();
    let mut out: [Array4<F>; SOURCE_VIEWS] =
        std::array::from_fn(|_| Array4::zeros((n, 1, h, w)));
    for (b, subject) in subjects.iter().enumerate() {
        for (i, view) in subject.source_views().iter().enumerate() {
            if view.dim() != (h, w) {
                return Err(Error::ShapeMismatch {
                    expected: format!("({h}, {w}) {} view", VIEW_NAMES[i]),
                    actual: format!("{:?} in subject {}", view.dim(), subject.id),
                });
            }
            let mut slot = out[i].slice_mut(s![b, 0, .., ..]);
            for (dst, src) in slot.iter_mut().zip(view.iter()) {
                *dst = F::of(*src as f64);
            }
        }
    }
    Ok(out)
}

/// Stacks each subject's target masks into `(n, h, w)` batches.
pub fn targets_batch(subjects: &[&Subject]) -> Result<[Array3<u8>; TARGET_VIEWS]> {
    let n = subjects.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty subject batch".into()));
    }
    let (h, w) = subjects[0].la_masks[0].dim();
    let mut out: [Array3<u8>; TARGET_VIEWS] =
        std::array::from_fn(|_| Array3::zeros((n, h, w)));
    for (b, subject) in subjects.iter().enumerate() {
        for (j, mask) in subject.target_masks().iter().enumerate() {
            if mask.dim() != (h, w) {
                return Err(Error::ShapeMismatch {
                    expected: format!("({h}, {w}) {} mask", VIEW_NAMES[j]),
                    actual: format!("{:?} in subject {}", mask.dim(), subject.id),
                });
            }
            out[j].slice_mut(s![b, .., ..]).assign(mask);
        }
    }
    Ok(out)
}

/// Encodes one subject's four source views into a `(4, latent_dim)` matrix.
pub fn subject_codes(model: &ShapeMae<f32>, subject: &Subject) -> Result<Array2<f32>> {
    let views = views_batch::<f32>(&[subject])?;
    let mut codes = Array2::zeros((SOURCE_VIEWS, model.spec.latent_dim()));
    for (i, view) in views.iter().enumerate() {
        let code = model.encode(view, i)?;
        codes.row_mut(i).assign(&code.row(0));
    }
    Ok(codes)
}

#[derive(Debug, Default)]
pub struct PriorsReport {
    pub written: Vec<String>,
    /// Subjects whose codes could not be produced, with the cause.
    pub failures: Vec<(String, String)>,
}

/// Encodes shape codes for every subject in the manifest into `out_dir`.
///
/// Per-subject read or encode errors are collected rather than aborting the
/// sweep; a failure to write a computed code is still fatal.
pub fn encode_priors(
    model: &ShapeMae<f32>,
    manifest: &DatasetManifest,
    data_root: &Path,
    out_dir: &Path,
) -> Result<PriorsReport> {
    let mut report = PriorsReport::default();
    for entry in &manifest.subjects {
        match read_subject(&data_root.join(&entry.path))
            .and_then(|subject| subject_codes(model, &subject))
        {
            Ok(codes) => {
                save_priors(out_dir, &entry.id, &codes)?;
                report.written.push(entry.id.clone());
            }
            Err(e) => report.failures.push((entry.id.clone(), e.to_string())),
        }
    }
    Ok(report)
}
