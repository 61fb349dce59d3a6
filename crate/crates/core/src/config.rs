//! Run configuration: one TOML file, one section per pipeline stage.
//!
//! Every section has full defaults, so an empty file (or no file) is a valid
//! configuration. Commands snapshot the *resolved* configuration — defaults
//! filled in, overrides applied — into their output directory, and training
//! embeds the same snapshot into checkpoints, so artifacts carry their own
//! provenance.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blocks::{ADAM_BETA1, ADAM_BETA2, BN_MOMENTUM, LEAKY_SLOPE, NORM_EPS};
use crate::datastore::{sha256_hex, write_atomic};
use crate::error::{Error, Result};
use crate::phantom::{AnatomyRanges, GenOptions, ViewConfig};

/// File name used for resolved-config snapshots.
pub const CONFIG_SNAPSHOT: &str = "config.toml";

/// `[phantom]`: dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub n_subjects: usize,
    /// Training fraction of the train/test split.
    pub split_fraction: f64,
    pub ranges: AnatomyRanges,
    pub view: ViewConfig,
}

impl Default for PhantomSection {
    fn default() -> Self {
        PhantomSection {
            n_subjects: 100,
            split_fraction: 0.8,
            ranges: AnatomyRanges::default(),
            view: ViewConfig::default(),
        }
    }
}

impl PhantomSection {
    pub fn gen_options(&self, seed: u64) -> GenOptions {
        GenOptions {
            n_subjects: self.n_subjects,
            seed,
            split_fraction: self.split_fraction,
            force: false,
            ranges: self.ranges.clone(),
            view_config: self.view.clone(),
        }
    }
}

/// `[trainer]`: knobs shared by every training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    /// Fraction of the training split actually used, in (0, 1].
    pub fraction: f64,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection { fraction: 1.0 }
    }
}

/// `[shape_mae]`: autoencoder architecture and optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeMaeSection {
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Encoder stage widths; the decoder mirrors them in reverse.
    pub widths: [usize; 4],
}

impl Default for ShapeMaeSection {
    fn default() -> Self {
        ShapeMaeSection {
            alpha: 0.5,
            beta: 0.001,
            lr: 1e-4,
            epochs: 200,
            batch: 10,
            seed: 0,
            widths: [16, 32, 64, 64],
        }
    }
}

/// `[segmenter]`: U-Net architecture and optimization, shared by the
/// prior-fused network and the plain baseline (`fuse_enabled` selects).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterSection {
    pub fuse_enabled: bool,
    pub base_filters: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Shape-code cache directory, relative to the run's output root.
    pub priors_path: PathBuf,
}

impl Default for SegmenterSection {
    fn default() -> Self {
        SegmenterSection {
            fuse_enabled: true,
            base_filters: 16,
            lr: 1e-3,
            epochs: 200,
            batch: 10,
            seed: 0,
            priors_path: PathBuf::from("priors"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub phantom: PhantomSection,
    pub trainer: TrainerSection,
    pub shape_mae: ShapeMaeSection,
    pub segmenter: SegmenterSection,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: AppConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.gen_options(0).validate()?;
        let checks = [
            (
                self.trainer.fraction > 0.0 && self.trainer.fraction <= 1.0,
                "trainer.fraction must lie in (0, 1]",
            ),
            (self.shape_mae.alpha >= 0.0, "shape_mae.alpha must be >= 0"),
            (self.shape_mae.beta >= 0.0, "shape_mae.beta must be >= 0"),
            (self.shape_mae.lr > 0.0, "shape_mae.lr must be positive"),
            (self.shape_mae.epochs >= 1, "shape_mae.epochs must be >= 1"),
            (self.shape_mae.batch >= 1, "shape_mae.batch must be >= 1"),
            (
                self.shape_mae.widths.iter().all(|&w| w >= 1),
                "shape_mae.widths must be positive",
            ),
            (self.segmenter.lr > 0.0, "segmenter.lr must be positive"),
            (self.segmenter.epochs >= 1, "segmenter.epochs must be >= 1"),
            (self.segmenter.batch >= 1, "segmenter.batch must be >= 1"),
            (
                self.segmenter.base_filters >= 1,
                "segmenter.base_filters must be >= 1",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }

    /// Resolved configuration as TOML, with the numeric constants baked into
    /// the binary appended for provenance.
    pub fn to_toml(&self) -> String {
        let body = toml::to_string_pretty(self).expect("config serializes");
        format!(
            "{body}\n[constants]\nleaky_slope = {LEAKY_SLOPE}\nnorm_eps = {NORM_EPS}\n\
             bn_momentum = {BN_MOMENTUM}\nadam_beta1 = {ADAM_BETA1}\nadam_beta2 = {ADAM_BETA2}\n"
        )
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    /// Writes the resolved snapshot into `dir` (created if needed).
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_SNAPSHOT);
        write_atomic(&path, self.to_toml().as_bytes())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_resolves_to_defaults() {
        let cfg: AppConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, AppConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let cfg: AppConfig = toml::from_str(
            "[shape_mae]\nbeta = 0.01\n\n[segmenter]\nfuse_enabled = false\n",
        )
        .unwrap();
        assert_eq!(cfg.shape_mae.beta, 0.01);
        assert_eq!(cfg.shape_mae.alpha, 0.5);
        assert!(!cfg.segmenter.fuse_enabled);
        assert_eq!(cfg.segmenter.base_filters, 16);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<AppConfig>("[trainer]\nfractoin = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("fractoin"));
    }

    #[test]
    fn snapshot_round_trips_and_hash_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = AppConfig::default();
        let path = cfg.write_snapshot(dir.path()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("leaky_slope"));
        // the snapshot body (minus the constants block) parses back equal
        let body = text.split("[constants]").next().unwrap();
        let back: AppConfig = toml::from_str(body).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn bad_values_name_the_field() {
        let cfg: AppConfig = toml::from_str("[trainer]\nfraction = 0.0\n").unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("trainer.fraction"), "{err}");
        let cfg: AppConfig = toml::from_str("[shape_mae]\nlr = -1.0\n").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("shape_mae.lr"));
    }

    #[test]
    fn load_reports_missing_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.toml");
        assert!(matches!(
            AppConfig::load(&missing),
            Err(Error::NotFound { .. })
        ));
        let bad = dir.path().join("bad.toml");
        fs::write(&bad, "[phantom\n").unwrap();
        assert!(matches!(AppConfig::load(&bad), Err(Error::Parse { .. })));
    }
}
