//! Per-slice stratified evaluation of a segmenter over a dataset split.

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};

use super::report::{EvalReport, MetricStats, RegionMetrics};
use super::{dice, hausdorff};
use crate::blocks::Real;
use crate::datastore::{load_priors, read_subject, DatasetManifest, Split};
use crate::geometry::{stratify_slices, SliceRegion};
use crate::mv_unet::{fused_priors, MvUnet};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub model_id: String,
    pub split: Split,
    pub seeds: Vec<u64>,
    /// Prior cache directory; required for fuse-enabled models.
    pub priors_dir: Option<PathBuf>,
    /// In-plane (row, column) spacing used for HD.
    pub spacing_mm: [f64; 2],
}

/// One scored slice: its stack index, stratum and both metrics.
#[derive(Debug, Clone, Copy)]
pub struct SliceScore {
    pub region: SliceRegion,
    pub slice: usize,
    pub dice: f64,
    pub hd_mm: f64,
}

/// Per-pixel argmax over the two-class channel axis; ties go to background.
pub fn argmax_masks<F: Real>(logits: &Array4<F>) -> Array3<u8> {
    let (n, _, h, w) = logits.dim();
    let mut out = Array3::zeros((n, h, w));
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                out[[b, y, x]] = (logits[[b, 1, y, x]] > logits[[b, 0, y, x]]) as u8;
            }
        }
    }
    out
}

/// Eval-mode inference over a slice batch, reduced to binary masks.
pub fn predict_masks<F: Real>(
    net: &MvUnet<F>,
    images: &Array4<F>,
    priors: Option<&Array4<F>>,
) -> Result<Array3<u8>> {
    Ok(argmax_masks(&net.forward(images, priors)?))
}

/// Scores every myocardium-bearing slice of one stack against ground truth.
pub fn score_stack(
    pred: &Array3<u8>,
    gt: &Array3<u8>,
    spacing_mm: [f64; 2],
) -> Result<Vec<SliceScore>> {
    if pred.dim() != gt.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?} prediction stack", gt.dim()),
            actual: format!("{:?}", pred.dim()),
        });
    }
    let views: Vec<_> = (0..gt.dim().0).map(|k| gt.index_axis(Axis(0), k)).collect();
    let labels = stratify_slices(&views)?;
    let mut out = Vec::new();
    for (k, &region) in labels.iter().enumerate() {
        if region == SliceRegion::Empty {
            continue;
        }
        let p = pred.index_axis(Axis(0), k);
        let g = gt.index_axis(Axis(0), k);
        out.push(SliceScore {
            region,
            slice: k,
            dice: dice(p, g)?,
            hd_mm: hausdorff(p, g, spacing_mm)?,
        });
    }
    Ok(out)
}

/// Folds slice scores into the per-region report.
pub fn aggregate(
    scores: &[SliceScore],
    model: &str,
    split: &str,
    seeds: &[u64],
    excluded: Vec<(String, String)>,
) -> EvalReport {
    let region = |r: SliceRegion| {
        let pick = |f: &dyn Fn(&SliceScore) -> f64| -> Vec<f64> {
            scores.iter().filter(|s| s.region == r).map(f).collect()
        };
        RegionMetrics {
            dice: MetricStats::from_values(&pick(&|s| s.dice)),
            hd_mm: MetricStats::from_values(&pick(&|s| s.hd_mm)),
        }
    };
    EvalReport {
        model: model.to_string(),
        split: split.to_string(),
        seeds: seeds.to_vec(),
        apex: region(SliceRegion::Apex),
        mid: region(SliceRegion::Mid),
        base: region(SliceRegion::Base),
        excluded,
    }
}

fn score_subject(
    net: &MvUnet<f32>,
    manifest: &DatasetManifest,
    data_root: &Path,
    id: &str,
    opts: &EvalOptions,
) -> Result<Vec<SliceScore>> {
    let subject = read_subject(&manifest.subject_dir(data_root, id)?)?;
    let images = subject.sa_images.view().insert_axis(Axis(1)).to_owned();
    let priors = if net.has_fuse() {
        let dir = opts.priors_dir.as_deref().expect("checked by evaluate");
        let codes = load_priors(dir, id, net.spec.latent_dim())?;
        let p = fused_priors(&codes, net.spec.latent_channels)?.insert_axis(Axis(0));
        let (_, c, h, w) = p.dim();
        Some(
            p.broadcast((subject.n_slices(), c, h, w))
                .expect("stackable priors")
                .to_owned(),
        )
    } else {
        None
    };
    let pred = predict_masks(net, &images, priors.as_ref())?;
    score_stack(&pred, &subject.sa_masks, opts.spacing_mm)
}

/// Runs per-slice inference over every SA slice of the split and aggregates
/// Dice/HD per stratum. Subjects that cannot be scored (unreadable files,
/// missing priors) are excluded and reported, not fatal.
pub fn evaluate(
    net: &MvUnet<f32>,
    manifest: &DatasetManifest,
    data_root: &Path,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let ids = manifest.ids_in(opts.split);
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!(
            "split {} has no subjects",
            opts.split
        )));
    }
    if net.has_fuse() && opts.priors_dir.is_none() {
        return Err(Error::InvalidInput(
            "fuse-enabled model needs a prior cache directory".into(),
        ));
    }
    let mut scores = Vec::new();
    let mut excluded = Vec::new();
    for id in ids {
        match score_subject(net, manifest, data_root, id, opts) {
            Ok(s) => scores.extend(s),
            Err(e) => excluded.push((id.to_string(), e.to_string())),
        }
    }
    if scores.is_empty() {
        let first = excluded
            .first()
            .map(|(id, why)| format!("{id}: {why}"))
            .unwrap_or_default();
        return Err(Error::InvalidInput(format!(
            "no subject in split {} could be scored ({first})",
            opts.split
        )));
    }
    Ok(aggregate(
        &scores,
        &opts.model_id,
        &opts.split.to_string(),
        &opts.seeds,
        excluded,
    ))
}
