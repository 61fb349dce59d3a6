//! The two training loops and their shared epoch driver.

use std::path::PathBuf;

use ndarray::{s, Array3, Array4, Axis};
use rand::seq::SliceRandom;

use super::curves::append_curve;
use super::{MaeTrainConfig, ResumeState, RunPaths, SegTrainConfig, TrainConfig};
use crate::blocks::{stream_n, zero_grads, Adam, Real};
use crate::datastore::{
    apply_buffers, apply_params, collect_buffers, collect_params, load_manifest, load_priors,
    read_subject, restore_adam, save_checkpoint, snapshot_adam, subsample_split, CheckpointData,
    DatasetManifest, ModelKind, RngState, Split,
};
use crate::mv_unet::{fused_priors, MvUnet};
use crate::phantom::Subject;
use crate::shape_mae::{targets_batch, views_batch, LossWeights, ShapeMae};
use crate::{Error, Result};

const MAE_HEADER: &str = "epoch,total,intra,inter,reg";
const SEG_HEADER: &str = "epoch,total";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Epochs executed by this call; zero when the run was already complete.
    pub epochs_run: usize,
    /// Epochs recorded in the final checkpoint.
    pub total_epochs: usize,
    /// Total loss of the final epoch.
    pub final_loss: f64,
    /// Lowest per-epoch total loss over the whole run.
    pub best_loss: f64,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub curves: PathBuf,
}

/// One model's hooks into the epoch driver. `batch_loss` leaves fresh
/// gradients in the model; the driver checks the loss is finite before
/// letting `apply_update` touch the parameters.
trait EpochTask {
    fn n_samples(&self) -> usize;
    fn header(&self) -> &'static str;
    fn batch_loss(&mut self, idx: &[usize]) -> Result<Vec<f64>>;
    fn apply_update(&mut self);
    fn checkpoint(&mut self, epoch: usize) -> CheckpointData;
}

fn drive(
    task: &mut dyn EpochTask,
    cfg: &TrainConfig,
    paths: &RunPaths,
    state: ResumeState,
) -> Result<TrainOutcome> {
    let n = task.n_samples();
    let mut best = state.best;
    let mut final_total = if state.completed > 0 && paths.curves.exists() {
        super::read_curves(&paths.curves)?
            .1
            .last()
            .map_or(f64::NAN, |r| r.values[0])
    } else {
        f64::NAN
    };
    for epoch in state.completed..cfg.epochs {
        let label = epoch + 1;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_n(cfg.seed, "shuffle", epoch as u64));
        let mut sums: Vec<f64> = Vec::new();
        let mut seen = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let vals = task.batch_loss(chunk)?;
            if !vals.iter().copied().all(f64::is_finite) {
                return Err(Error::NonFiniteLoss {
                    epoch: label,
                    batch: bi,
                    lr: cfg.lr,
                    last_good: paths.last.exists().then(|| paths.last.clone()),
                });
            }
            task.apply_update();
            if sums.is_empty() {
                sums = vec![0.0; vals.len()];
            }
            for (s, v) in sums.iter_mut().zip(&vals) {
                *s += v * chunk.len() as f64;
            }
            seen += chunk.len();
        }
        let means: Vec<f64> = sums.iter().map(|s| s / seen as f64).collect();
        append_curve(&paths.curves, task.header(), label, &means)?;
        save_checkpoint(&paths.last, &task.checkpoint(label))?;
        if means[0] < best {
            best = means[0];
            std::fs::copy(&paths.last, &paths.best).map_err(|e| Error::io(&paths.best, e))?;
        }
        final_total = means[0];
        log::info!(
            "{} epoch {label}/{}: {}",
            cfg.model,
            cfg.epochs,
            task.header()[6..]
                .split(',')
                .zip(&means)
                .map(|(k, v)| format!("{k} {v:.6}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    Ok(TrainOutcome {
        epochs_run: cfg.epochs - state.completed,
        total_epochs: cfg.epochs,
        final_loss: final_total,
        best_loss: best,
        last_checkpoint: paths.last.clone(),
        best_checkpoint: paths.best.clone(),
        curves: paths.curves.clone(),
    })
}

/// Reads the training split (after subsampling) into memory.
fn load_train_subjects(cfg: &TrainConfig) -> Result<(DatasetManifest, Vec<Subject>)> {
    let manifest = load_manifest(&cfg.data_dir)?;
    let manifest = subsample_split(&manifest, cfg.fraction, cfg.seed)?;
    let mut subjects = Vec::new();
    for id in manifest.ids_in(Split::Train) {
        subjects.push(read_subject(&manifest.subject_dir(&cfg.data_dir, id)?)?);
    }
    Ok((manifest, subjects))
}

fn check_image_size(cfg_size: usize, manifest: &DatasetManifest) -> Result<()> {
    if cfg_size != manifest.image_size {
        return Err(Error::Config(format!(
            "model expects {cfg_size}x{cfg_size} inputs but the dataset is {0}x{0}",
            manifest.image_size
        )));
    }
    Ok(())
}

fn restore_optimizer<F: Real>(ck: &CheckpointData) -> Result<Adam<F>> {
    let snap = ck.optimizer.as_ref().ok_or_else(|| {
        Error::Config("checkpoint lacks optimizer state; cannot resume training".into())
    })?;
    restore_adam(snap)
}

struct MaeTask {
    model: ShapeMae<f32>,
    adam: Adam<f32>,
    subjects: Vec<Subject>,
    weights: LossWeights,
    seed: u64,
    config_toml: String,
}

impl EpochTask for MaeTask {
    fn n_samples(&self) -> usize {
        self.subjects.len()
    }

    fn header(&self) -> &'static str {
        MAE_HEADER
    }

    fn batch_loss(&mut self, idx: &[usize]) -> Result<Vec<f64>> {
        zero_grads(&mut self.model);
        let refs: Vec<&Subject> = idx.iter().map(|&i| &self.subjects[i]).collect();
        let views = views_batch::<f32>(&refs)?;
        let targets = targets_batch(&refs)?;
        let b = self.model.loss_backward(&views, &targets, &self.weights)?;
        Ok(vec![b.total, b.intra, b.inter, b.reg])
    }

    fn apply_update(&mut self) {
        self.adam.step(&mut self.model);
    }

    fn checkpoint(&mut self, epoch: usize) -> CheckpointData {
        CheckpointData {
            model_kind: ModelKind::ShapeMae,
            epoch: epoch as u64,
            step: self.adam.step,
            config_toml: self.config_toml.clone(),
            rng: RngState::capture(&stream_n(self.seed, "shuffle", epoch as u64)),
            params: collect_params(&mut self.model),
            buffers: collect_buffers(&mut self.model),
            optimizer: Some(snapshot_adam(&self.adam)),
        }
    }
}

/// Trains the multi-view autoencoder, resuming from `out_dir` when a
/// compatible checkpoint is already there.
pub fn train_shape_mae(cfg: &MaeTrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let config_toml = cfg.to_toml();
    let paths = RunPaths::new(&cfg.train.out_dir)?;
    let state = paths.resume(ModelKind::ShapeMae, &config_toml)?;
    if state.completed >= cfg.train.epochs {
        return finished_outcome(&paths, cfg.train.epochs);
    }

    let (manifest, subjects) = load_train_subjects(&cfg.train)?;
    check_image_size(cfg.spec.image_size, &manifest)?;
    let mut model = ShapeMae::<f32>::new(cfg.spec, cfg.train.seed)?;
    let mut adam = Adam::new(cfg.train.lr);
    if let Some(ck) = &state.checkpoint {
        apply_params(&mut model, &ck.params)?;
        apply_buffers(&mut model, &ck.buffers)?;
        adam = restore_optimizer(ck)?;
    }
    let mut task = MaeTask {
        model,
        adam,
        subjects,
        weights: cfg.weights,
        seed: cfg.train.seed,
        config_toml,
    };
    drive(&mut task, &cfg.train, &paths, state)
}

/// Every SA slice of every training subject, empty masks included.
fn slice_samples(subjects: &[Subject]) -> Vec<(usize, usize)> {
    subjects
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..s.n_slices()).map(move |k| (si, k)))
        .collect()
}

struct SegTask {
    model: MvUnet<f32>,
    adam: Adam<f32>,
    subjects: Vec<Subject>,
    samples: Vec<(usize, usize)>,
    /// Per-subject fused prior grids, present iff the fuse block is on.
    priors: Option<Vec<Array3<f32>>>,
    kind: ModelKind,
    seed: u64,
    config_toml: String,
}

impl EpochTask for SegTask {
    fn n_samples(&self) -> usize {
        self.samples.len()
    }

    fn header(&self) -> &'static str {
        SEG_HEADER
    }

    fn batch_loss(&mut self, idx: &[usize]) -> Result<Vec<f64>> {
        zero_grads(&mut self.model);
        let size = self.model.spec.image_size;
        let b = idx.len();
        let mut images = Array4::<f32>::zeros((b, 1, size, size));
        let mut targets = Array3::<u8>::zeros((b, size, size));
        for (k, &i) in idx.iter().enumerate() {
            let (si, sl) = self.samples[i];
            let subject = &self.subjects[si];
            images
                .slice_mut(s![k, 0, .., ..])
                .assign(&subject.sa_images.index_axis(Axis(0), sl));
            targets
                .slice_mut(s![k, .., ..])
                .assign(&subject.sa_masks.index_axis(Axis(0), sl));
        }
        let priors = self.priors.as_ref().map(|grids| {
            let g0 = &grids[0];
            let (c, h, w) = g0.dim();
            let mut p = Array4::<f32>::zeros((b, c, h, w));
            for (k, &i) in idx.iter().enumerate() {
                p.slice_mut(s![k, .., .., ..]).assign(&grids[self.samples[i].0]);
            }
            p
        });
        let ce = self
            .model
            .loss_backward(&images, priors.as_ref(), &targets)?;
        Ok(vec![ce])
    }

    fn apply_update(&mut self) {
        self.adam.step(&mut self.model);
    }

    fn checkpoint(&mut self, epoch: usize) -> CheckpointData {
        CheckpointData {
            model_kind: self.kind,
            epoch: epoch as u64,
            step: self.adam.step,
            config_toml: self.config_toml.clone(),
            rng: RngState::capture(&stream_n(self.seed, "shuffle", epoch as u64)),
            params: collect_params(&mut self.model),
            buffers: collect_buffers(&mut self.model),
            optimizer: Some(snapshot_adam(&self.adam)),
        }
    }
}

/// Loads the cached shape codes for every training subject, failing fast
/// with the full list of subjects whose cache entries are missing.
fn load_subject_priors(cfg: &SegTrainConfig, subjects: &[Subject]) -> Result<Vec<Array3<f32>>> {
    let dir = cfg.priors_dir.as_ref().expect("validated");
    let latent_dim = cfg.spec.latent_dim();
    let mut grids = Vec::with_capacity(subjects.len());
    let mut missing = Vec::new();
    for subject in subjects {
        match load_priors(dir, &subject.id, latent_dim) {
            Ok(codes) => grids.push(fused_priors(&codes, cfg.spec.latent_channels)?),
            Err(Error::NotFound { .. }) => missing.push(subject.id.clone()),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingPriors(missing));
    }
    Ok(grids)
}

/// Trains the prior-fused segmenter or the plain baseline, depending on
/// `cfg.spec.fuse_enabled`.
pub fn train_segmenter(cfg: &SegTrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let config_toml = cfg.to_toml();
    let paths = RunPaths::new(&cfg.train.out_dir)?;
    let state = paths.resume(cfg.train.model, &config_toml)?;
    if state.completed >= cfg.train.epochs {
        return finished_outcome(&paths, cfg.train.epochs);
    }

    let (manifest, subjects) = load_train_subjects(&cfg.train)?;
    check_image_size(cfg.spec.image_size, &manifest)?;
    let priors = if cfg.spec.fuse_enabled {
        Some(load_subject_priors(cfg, &subjects)?)
    } else {
        None
    };
    let mut model = MvUnet::<f32>::new(cfg.spec, cfg.train.seed)?;
    let mut adam = Adam::new(cfg.train.lr);
    if let Some(ck) = &state.checkpoint {
        apply_params(&mut model, &ck.params)?;
        apply_buffers(&mut model, &ck.buffers)?;
        adam = restore_optimizer(ck)?;
    }
    let samples = slice_samples(&subjects);
    let mut task = SegTask {
        model,
        adam,
        subjects,
        samples,
        priors,
        kind: cfg.train.model,
        seed: cfg.train.seed,
        config_toml,
    };
    drive(&mut task, &cfg.train, &paths, state)
}

/// Outcome for a run whose epoch budget is already met: nothing to train,
/// losses read back from the curve file.
fn finished_outcome(paths: &RunPaths, epochs: usize) -> Result<TrainOutcome> {
    let (final_loss, best_loss) = if paths.curves.exists() {
        let (_, rows) = super::read_curves(&paths.curves)?;
        (
            rows.last().map_or(f64::NAN, |r| r.values[0]),
            rows.iter()
                .map(|r| r.values[0])
                .fold(f64::INFINITY, f64::min),
        )
    } else {
        (f64::NAN, f64::INFINITY)
    };
    Ok(TrainOutcome {
        epochs_run: 0,
        total_epochs: epochs,
        final_loss,
        best_loss,
        last_checkpoint: paths.last.clone(),
        best_checkpoint: paths.best.clone(),
        curves: paths.curves.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{load_checkpoint, save_priors};
    use crate::phantom::{generate_dataset, AnatomyRanges, GenOptions, ViewConfig};
    use crate::shape_mae::ShapeMaeSpec;
    use crate::trainer::read_curves;
    use ndarray::Array2;
    use std::path::Path;

    fn dataset(dir: &Path, n: usize, split: f64, seed: u64) {
        let opts = GenOptions {
            n_subjects: n,
            seed,
            split_fraction: split,
            force: false,
            ranges: AnatomyRanges::default(),
            view_config: ViewConfig::default(),
        };
        generate_dataset(&opts, dir).unwrap();
    }

    fn mae_cfg(data: &Path, out: &Path, epochs: usize, seed: u64) -> MaeTrainConfig {
        MaeTrainConfig {
            train: TrainConfig {
                model: ModelKind::ShapeMae,
                epochs,
                batch: 10,
                lr: 1e-4,
                seed,
                fraction: 1.0,
                data_dir: data.to_path_buf(),
                out_dir: out.to_path_buf(),
            },
            spec: ShapeMaeSpec {
                widths: [2, 2, 2, 2],
                ..ShapeMaeSpec::default()
            },
            weights: LossWeights::default(),
        }
    }

    fn seg_cfg(data: &Path, out: &Path, epochs: usize, fuse: bool) -> SegTrainConfig {
        SegTrainConfig {
            priors_dir: None,
            train: TrainConfig {
                model: if fuse { ModelKind::MvUnet } else { ModelKind::Unet2d },
                epochs,
                batch: 16,
                lr: 1e-3,
                seed: 0,
                fraction: 1.0,
                data_dir: data.to_path_buf(),
                out_dir: out.to_path_buf(),
            },
            spec: crate::mv_unet::MvUnetSpec {
                base_filters: 2,
                fuse_enabled: fuse,
                ..crate::mv_unet::MvUnetSpec::default()
            },
        }
    }

    #[test]
    fn mae_run_logs_checkpoints_and_composes_the_loss() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        dataset(&data, 2, 1.0, 5);
        let out = tmp.path().join("run");
        let outcome = train_shape_mae(&mae_cfg(&data, &out, 3, 0)).unwrap();

        assert_eq!(outcome.epochs_run, 3);
        assert!(outcome.final_loss.is_finite());
        assert!(outcome.best_loss <= outcome.final_loss);
        assert!(outcome.last_checkpoint.exists());
        assert!(outcome.best_checkpoint.exists());

        let (header, rows) = read_curves(&outcome.curves).unwrap();
        assert_eq!(header, "epoch,total,intra,inter,reg");
        assert_eq!(rows.len(), 3);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.epoch, i + 1);
            let [total, intra, inter, reg] = row.values[..] else {
                panic!("bad row arity")
            };
            let composed = intra + 0.5 * inter + 0.001 * reg;
            assert!((total - composed).abs() <= 1e-9 * total.abs().max(1.0));
        }

        let ck = load_checkpoint(&outcome.last_checkpoint).unwrap();
        assert_eq!(ck.model_kind, ModelKind::ShapeMae);
        assert_eq!(ck.epoch, 3);
        assert_eq!(ck.step, 3); // one batch of two subjects per epoch
        assert!(ck.optimizer.is_some());
    }

    #[test]
    fn equal_seeds_reproduce_the_run_bitwise() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        dataset(&data, 2, 1.0, 6);

        let out_a = tmp.path().join("a");
        let out_b = tmp.path().join("b");
        let a = train_shape_mae(&mae_cfg(&data, &out_a, 1, 9)).unwrap();
        let b = train_shape_mae(&mae_cfg(&data, &out_b, 1, 9)).unwrap();
        assert_eq!(a.final_loss, b.final_loss);

        let ck_a = load_checkpoint(&a.last_checkpoint).unwrap();
        let ck_b = load_checkpoint(&b.last_checkpoint).unwrap();
        assert_eq!(ck_a.params, ck_b.params);

        let c = train_shape_mae(&mae_cfg(&data, &tmp.path().join("c"), 1, 10)).unwrap();
        assert_ne!(a.final_loss, c.final_loss);
    }

    #[test]
    fn resuming_retraces_a_straight_run() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        dataset(&data, 2, 1.0, 7);

        let straight = train_shape_mae(&mae_cfg(&data, &tmp.path().join("s"), 3, 1)).unwrap();

        let out = tmp.path().join("r");
        train_shape_mae(&mae_cfg(&data, &out, 2, 1)).unwrap();
        let resumed = train_shape_mae(&mae_cfg(&data, &out, 3, 1)).unwrap();
        assert_eq!(resumed.epochs_run, 1);

        let (_, rows_s) = read_curves(&straight.curves).unwrap();
        let (_, rows_r) = read_curves(&resumed.curves).unwrap();
        assert_eq!(rows_s, rows_r);
        assert_eq!(
            load_checkpoint(&straight.last_checkpoint).unwrap().params,
            load_checkpoint(&resumed.last_checkpoint).unwrap().params
        );

        // A third call has nothing left to do.
        let done = train_shape_mae(&mae_cfg(&data, &out, 3, 1)).unwrap();
        assert_eq!(done.epochs_run, 0);
        assert_eq!(done.final_loss, resumed.final_loss);

        // Changing a non-resumable knob is refused.
        let mut other = mae_cfg(&data, &out, 4, 1);
        other.train.lr *= 10.0;
        let err = train_shape_mae(&other).unwrap_err().to_string();
        assert!(err.contains("different"), "{err}");
    }

    #[test]
    fn diverged_loss_aborts_and_keeps_the_last_good_checkpoint() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        dataset(&data, 2, 1.0, 8);

        let out = tmp.path().join("run");
        let mut cfg = mae_cfg(&data, &out, 5, 0);
        cfg.train.lr = 1e300; // one update throws every f32 parameter to ±inf
        let err = train_shape_mae(&cfg).unwrap_err();
        match err {
            Error::NonFiniteLoss {
                epoch,
                batch,
                lr,
                last_good,
            } => {
                assert_eq!((epoch, batch), (2, 0));
                assert_eq!(lr, 1e300);
                let kept = last_good.expect("epoch 1 checkpoint retained");
                assert_eq!(load_checkpoint(&kept).unwrap().epoch, 1);
            }
            other => panic!("unexpected error {other}"),
        }
        let (_, rows) = read_curves(&out.join(super::super::CURVES_FILE)).unwrap();
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn every_sa_slice_becomes_a_training_sample() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        dataset(&data, 2, 1.0, 11);
        let (_, subjects) = load_train_subjects(&TrainConfig {
            model: ModelKind::Unet2d,
            epochs: 1,
            batch: 1,
            lr: 1e-3,
            seed: 0,
            fraction: 1.0,
            data_dir: data.clone(),
            out_dir: tmp.path().join("x"),
        })
        .unwrap();

        let samples = slice_samples(&subjects);
        let total: usize = subjects.iter().map(|s| s.n_slices()).sum();
        assert_eq!(samples.len(), total);

        let empties: usize = subjects
            .iter()
            .map(|s| {
                (0..s.n_slices())
                    .filter(|&k| s.sa_masks.index_axis(Axis(0), k).iter().all(|&v| v == 0))
                    .count()
            })
            .sum();
        assert!(empties > 0, "phantom stacks should pad past the LV");
    }

    #[test]
    fn baseline_trains_without_priors() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        dataset(&data, 2, 1.0, 12);
        let out = tmp.path().join("run");
        let outcome = train_segmenter(&seg_cfg(&data, &out, 1, false)).unwrap();
        assert!(outcome.final_loss.is_finite());
        assert_eq!(
            load_checkpoint(&outcome.last_checkpoint).unwrap().model_kind,
            ModelKind::Unet2d
        );
    }

    #[test]
    fn fused_training_lists_subjects_with_missing_priors() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        dataset(&data, 4, 1.0, 13);
        let manifest = load_manifest(&data).unwrap();
        let ids: Vec<String> = manifest
            .ids_in(Split::Train)
            .into_iter()
            .map(str::to_string)
            .collect();
        assert_eq!(ids.len(), 4);

        let priors = tmp.path().join("priors");
        std::fs::create_dir_all(&priors).unwrap();
        let latent_dim = crate::mv_unet::MvUnetSpec {
            base_filters: 2,
            ..Default::default()
        }
        .latent_dim();
        for id in &ids[..2] {
            let codes = Array2::<f32>::zeros((4, latent_dim));
            save_priors(&priors, id, &codes).unwrap();
        }

        let mut cfg = seg_cfg(&data, &tmp.path().join("run"), 1, true);
        cfg.priors_dir = Some(priors.clone());
        match train_segmenter(&cfg).unwrap_err() {
            Error::MissingPriors(mut listed) => {
                listed.sort();
                let mut expected: Vec<String> = ids[2..].to_vec();
                expected.sort();
                assert_eq!(listed, expected);
            }
            other => panic!("unexpected error {other}"),
        }

        // Completing the cache lets the same config train.
        for id in &ids[2..] {
            let codes = Array2::<f32>::zeros((4, latent_dim));
            save_priors(&priors, id, &codes).unwrap();
        }
        let outcome = train_segmenter(&cfg).unwrap();
        assert!(outcome.final_loss.is_finite());
    }
}
