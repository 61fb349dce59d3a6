//! Training loops for the autoencoder and the two segmenters, plus the
//! data-fraction experiment matrix.
//!
//! Every run owns an output directory holding `curves.csv` (append-only
//! per-epoch losses) and two checkpoints: `last.ckpt`, rewritten at each
//! epoch boundary, and `best.ckpt`, a copy of the lowest-total-loss epoch.
//! Reported numbers come from the final epoch; the best-loss copy is kept
//! for inspection. Restarting with the same config resumes from
//! `last.ckpt`; batch order is drawn from (seed, epoch), so an interrupted
//! run retraces the straight-through trajectory.

mod curves;
mod experiment;
mod loops;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{SegmenterSection, ShapeMaeSection, TrainerSection};
use crate::datastore::{load_checkpoint, CheckpointData, ModelKind};
use crate::mv_unet::MvUnetSpec;
use crate::shape_mae::{LossWeights, ShapeMaeSpec};
use crate::{Error, Result};

pub use curves::{read_curves, CurveRow};
pub use experiment::{
    run_experiment, CellKey, CellStatus, ExperimentOutcome, ExperimentPlan, CONSOLIDATED_FILE,
    REPORT_FILE,
};
pub use loops::{train_segmenter, train_shape_mae, TrainOutcome};

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const CURVES_FILE: &str = "curves.csv";

/// Optimizer betas; the loops use Adam with these throughout.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;

/// Knobs shared by every training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of the training split actually used, in (0, 1].
    pub fraction: f64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} not positive", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "data fraction {} outside (0, 1]",
                self.fraction
            )));
        }
        Ok(())
    }
}

/// Autoencoder run: shared knobs plus architecture and loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeTrainConfig {
    pub train: TrainConfig,
    pub spec: ShapeMaeSpec,
    pub weights: LossWeights,
}

impl MaeTrainConfig {
    /// Assembles a run from the config-file sections.
    pub fn from_sections(
        mae: &ShapeMaeSection,
        trainer: &TrainerSection,
        image_size: usize,
        data_dir: PathBuf,
        out_dir: PathBuf,
    ) -> Self {
        MaeTrainConfig {
            train: TrainConfig {
                model: ModelKind::ShapeMae,
                epochs: mae.epochs,
                batch: mae.batch,
                lr: mae.lr,
                seed: mae.seed,
                fraction: trainer.fraction,
                data_dir,
                out_dir,
            },
            spec: ShapeMaeSpec {
                image_size,
                widths: mae.widths,
                ..ShapeMaeSpec::default()
            },
            weights: LossWeights {
                alpha: mae.alpha,
                beta: mae.beta,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.spec.validate()?;
        if self.train.model != ModelKind::ShapeMae {
            return Err(Error::Config(format!(
                "autoencoder run configured with model {}",
                self.train.model
            )));
        }
        for (name, v) in [("alpha", self.weights.alpha), ("beta", self.weights.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} = {v} invalid")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("train config serializes")
    }
}

/// Segmenter run; `priors_dir` feeds the fuse block and is required iff
/// the spec enables it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegTrainConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub spec: MvUnetSpec,
}

impl SegTrainConfig {
    pub fn from_sections(
        seg: &SegmenterSection,
        trainer: &TrainerSection,
        image_size: usize,
        data_dir: PathBuf,
        out_dir: PathBuf,
        priors_dir: Option<PathBuf>,
    ) -> Self {
        let model = if seg.fuse_enabled {
            ModelKind::MvUnet
        } else {
            ModelKind::Unet2d
        };
        SegTrainConfig {
            priors_dir,
            train: TrainConfig {
                model,
                epochs: seg.epochs,
                batch: seg.batch,
                lr: seg.lr,
                seed: seg.seed,
                fraction: trainer.fraction,
                data_dir,
                out_dir,
            },
            spec: MvUnetSpec {
                image_size,
                base_filters: seg.base_filters,
                fuse_enabled: seg.fuse_enabled,
                ..MvUnetSpec::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.spec.validate()?;
        let expected = if self.spec.fuse_enabled {
            ModelKind::MvUnet
        } else {
            ModelKind::Unet2d
        };
        if self.train.model != expected {
            return Err(Error::Config(format!(
                "model {} does not match fuse_enabled = {}",
                self.train.model, self.spec.fuse_enabled
            )));
        }
        if self.spec.fuse_enabled && self.priors_dir.is_none() {
            return Err(Error::Config(
                "fuse-enabled training needs a shape-prior cache directory; \
                 encode priors first or disable the fuse block"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("train config serializes")
    }
}

pub(crate) struct RunPaths {
    pub last: PathBuf,
    pub best: PathBuf,
    pub curves: PathBuf,
}

pub(crate) struct ResumeState {
    /// Epochs already completed in this output directory.
    pub completed: usize,
    /// Lowest total loss seen so far (+inf on a fresh run).
    pub best: f64,
    pub checkpoint: Option<CheckpointData>,
}

impl RunPaths {
    pub fn new(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        Ok(RunPaths {
            last: out_dir.join(LAST_CHECKPOINT),
            best: out_dir.join(BEST_CHECKPOINT),
            curves: out_dir.join(CURVES_FILE),
        })
    }

    /// Loads the run state left by a previous session, verifying it was
    /// produced by an equivalent config. Curve rows past the checkpointed
    /// epoch (a crash between the curve append and the checkpoint write)
    /// are dropped.
    pub fn resume(&self, kind: ModelKind, config_toml: &str) -> Result<ResumeState> {
        if !self.last.exists() {
            curves::truncate_curves(&self.curves, 0)?;
            return Ok(ResumeState {
                completed: 0,
                best: f64::INFINITY,
                checkpoint: None,
            });
        }
        let ck = load_checkpoint(&self.last)?;
        if ck.model_kind != kind {
            return Err(Error::Config(format!(
                "checkpoint {} holds a {} model, expected {}",
                self.last.display(),
                ck.model_kind,
                kind
            )));
        }
        if resume_fingerprint(&ck.config_toml)? != resume_fingerprint(config_toml)? {
            return Err(Error::Config(format!(
                "output directory {} holds a run trained with a different \
                 configuration; use a fresh directory",
                self.last.parent().unwrap_or(Path::new(".")).display()
            )));
        }
        let completed = ck.epoch as usize;
        curves::truncate_curves(&self.curves, completed)?;
        let best = if self.curves.exists() {
            read_curves(&self.curves)?
                .1
                .iter()
                .map(|r| r.values[0])
                .fold(f64::INFINITY, f64::min)
        } else {
            f64::INFINITY
        };
        Ok(ResumeState {
            completed,
            best,
            checkpoint: Some(ck),
        })
    }
}

/// Config comparison for resumption ignores knobs that may legitimately
/// change between sessions: the epoch budget (extending a run) and
/// filesystem locations (moving a run).
fn resume_fingerprint(config_toml: &str) -> Result<toml::Value> {
    let mut v: toml::Value = toml::from_str(config_toml).map_err(|e: toml::de::Error| {
        Error::Config(format!("checkpointed config does not parse: {e}"))
    })?;
    if let Some(t) = v.as_table_mut() {
        t.remove("priors_dir");
        if let Some(train) = t.get_mut("train").and_then(|x| x.as_table_mut()) {
            train.remove("epochs");
            train.remove("data_dir");
            train.remove("out_dir");
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg() -> TrainConfig {
        TrainConfig {
            model: ModelKind::Unet2d,
            epochs: 2,
            batch: 4,
            lr: 1e-3,
            seed: 0,
            fraction: 1.0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
        }
    }

    #[test]
    fn config_invariants_are_enforced() {
        assert!(base_cfg().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..base_cfg() },
            TrainConfig { lr: f64::NAN, ..base_cfg() },
            TrainConfig { epochs: 0, ..base_cfg() },
            TrainConfig { batch: 0, ..base_cfg() },
            TrainConfig { fraction: 0.0, ..base_cfg() },
            TrainConfig { fraction: 1.2, ..base_cfg() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn fuse_and_model_kind_must_agree() {
        let seg = SegTrainConfig {
            priors_dir: Some(PathBuf::from("priors")),
            train: TrainConfig { model: ModelKind::MvUnet, ..base_cfg() },
            spec: MvUnetSpec::default(),
        };
        assert!(seg.validate().is_ok());

        let mismatched = SegTrainConfig {
            spec: MvUnetSpec { fuse_enabled: false, ..MvUnetSpec::default() },
            ..seg.clone()
        };
        let err = mismatched.validate().unwrap_err().to_string();
        assert!(err.contains("fuse_enabled"), "{err}");

        let no_cache = SegTrainConfig { priors_dir: None, ..seg };
        let err = no_cache.validate().unwrap_err().to_string();
        assert!(err.contains("prior cache"), "{err}");
    }

    #[test]
    fn config_toml_round_trips() {
        let mae = MaeTrainConfig {
            train: TrainConfig { model: ModelKind::ShapeMae, ..base_cfg() },
            spec: ShapeMaeSpec::default(),
            weights: LossWeights::default(),
        };
        let back: MaeTrainConfig = toml::from_str(&mae.to_toml()).unwrap();
        assert_eq!(back, mae);

        for priors in [None, Some(PathBuf::from("cache"))] {
            let seg = SegTrainConfig {
                priors_dir: priors,
                train: base_cfg(),
                spec: MvUnetSpec { fuse_enabled: false, ..MvUnetSpec::default() },
            };
            let back: SegTrainConfig = toml::from_str(&seg.to_toml()).unwrap();
            assert_eq!(back, seg);
        }
    }

    #[test]
    fn fingerprint_ignores_epochs_and_locations() {
        let a = SegTrainConfig {
            priors_dir: Some(PathBuf::from("p1")),
            train: base_cfg(),
            spec: MvUnetSpec { fuse_enabled: false, ..MvUnetSpec::default() },
        };
        let mut b = a.clone();
        b.train.epochs += 10;
        b.train.out_dir = PathBuf::from("elsewhere");
        b.priors_dir = None;
        assert_eq!(
            resume_fingerprint(&a.to_toml()).unwrap(),
            resume_fingerprint(&b.to_toml()).unwrap()
        );

        let mut c = a.clone();
        c.train.lr *= 2.0;
        assert_ne!(
            resume_fingerprint(&a.to_toml()).unwrap(),
            resume_fingerprint(&c.to_toml()).unwrap()
        );
    }
}
