//! The data-regime experiment: {model} x {fraction} x {seed} cells, each
//! trained on its slice of the training split and scored on the fixed
//! test split, then pooled across seeds into one table per condition.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::loops::train_segmenter;
use super::{SegTrainConfig, TrainConfig};
use crate::datastore::{
    apply_buffers, apply_params, load_checkpoint, load_manifest, DatasetManifest, ModelKind, Split,
};
use crate::metrics::{evaluate, EvalOptions, EvalReport};
use crate::mv_unet::{MvUnet, MvUnetSpec};
use crate::{Error, Result};

pub const REPORT_FILE: &str = "report.toml";
pub const CONSOLIDATED_FILE: &str = "consolidated.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub models: Vec<ModelKind>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub base_filters: usize,
    pub latent_channels: usize,
    pub data_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        fn distinct<T: PartialEq>(xs: &[T]) -> bool {
            xs.iter().enumerate().all(|(i, x)| !xs[..i].contains(x))
        }
        if self.models.is_empty() || self.fractions.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "experiment matrix needs at least one model, fraction and seed".into(),
            ));
        }
        if self.models.contains(&ModelKind::ShapeMae) {
            return Err(Error::Config(
                "the experiment matrix trains segmenters; train shape_mae separately".into(),
            ));
        }
        if !(distinct(&self.models) && distinct(&self.fractions) && distinct(&self.seeds)) {
            return Err(Error::Config("experiment matrix axes repeat a value".into()));
        }
        for &f in &self.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("data fraction {f} outside (0, 1]")));
            }
        }
        if self.models.contains(&ModelKind::MvUnet) && self.priors_dir.is_none() {
            return Err(Error::Config(
                "matrix includes mv_unet but no prior cache directory was given".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub model: ModelKind,
    pub fraction: f64,
    pub seed: u64,
}

impl CellKey {
    pub fn dir_name(&self) -> String {
        format!("{}-f{}-s{}", self.model, self.fraction, self.seed)
    }

    /// Report label shared by every seed of a (model, fraction) condition.
    fn model_id(&self) -> String {
        format!("{} ({}%)", self.model, self.fraction * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Done(EvalReport),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub cells: Vec<(CellKey, CellStatus)>,
    /// One pooled report per (model, fraction), completed seeds only.
    pub consolidated: Vec<EvalReport>,
    pub table: String,
    pub table_path: PathBuf,
}

fn run_cell(plan: &ExperimentPlan, manifest: &DatasetManifest, key: &CellKey) -> Result<EvalReport> {
    let dir = plan.out_dir.join(key.dir_name());
    let fused = key.model == ModelKind::MvUnet;
    let cfg = SegTrainConfig {
        priors_dir: fused.then(|| plan.priors_dir.clone().expect("validated")),
        train: TrainConfig {
            model: key.model,
            epochs: plan.epochs,
            batch: plan.batch,
            lr: plan.lr,
            seed: key.seed,
            fraction: key.fraction,
            data_dir: plan.data_dir.clone(),
            out_dir: dir.clone(),
        },
        spec: MvUnetSpec {
            image_size: manifest.image_size,
            base_filters: plan.base_filters,
            fuse_enabled: fused,
            latent_channels: plan.latent_channels,
        },
    };
    let outcome = train_segmenter(&cfg)?;

    let report_path = dir.join(REPORT_FILE);
    if outcome.epochs_run == 0 {
        if let Some(report) = std::fs::read_to_string(&report_path)
            .ok()
            .and_then(|t| toml::from_str(&t).ok())
        {
            return Ok(report);
        }
    }

    // Reported numbers come from the final epoch.
    let ck = load_checkpoint(&outcome.last_checkpoint)?;
    let mut net = MvUnet::<f32>::new(cfg.spec, key.seed)?;
    apply_params(&mut net, &ck.params)?;
    apply_buffers(&mut net, &ck.buffers)?;
    let opts = EvalOptions {
        model_id: key.model_id(),
        split: Split::Test,
        seeds: vec![key.seed],
        priors_dir: cfg.priors_dir.clone(),
        spacing_mm: [manifest.spacing_mm[0], manifest.spacing_mm[1]],
    };
    let report = evaluate(&net, manifest, &plan.data_dir, &opts)?;
    let text = toml::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("report does not serialize: {e}")))?;
    std::fs::write(&report_path, text).map_err(|e| Error::io(&report_path, e))?;
    Ok(report)
}

/// Runs every cell of the matrix, skipping work already on disk. A failed
/// cell is reported and does not stop its neighbours.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    plan.validate()?;
    let manifest = load_manifest(&plan.data_dir)?;
    std::fs::create_dir_all(&plan.out_dir).map_err(|e| Error::io(&plan.out_dir, e))?;

    let mut cells = Vec::new();
    for &model in &plan.models {
        for &fraction in &plan.fractions {
            for &seed in &plan.seeds {
                let key = CellKey { model, fraction, seed };
                let status = match run_cell(plan, &manifest, &key) {
                    Ok(report) => CellStatus::Done(report),
                    Err(e) => {
                        log::warn!("cell {} failed: {e}", key.dir_name());
                        CellStatus::Failed(e.to_string())
                    }
                };
                cells.push((key, status));
            }
        }
    }

    let mut consolidated = Vec::new();
    let mut table = String::new();
    for &model in &plan.models {
        for &fraction in &plan.fractions {
            let group: Vec<EvalReport> = cells
                .iter()
                .filter(|(k, _)| k.model == model && k.fraction == fraction)
                .filter_map(|(_, s)| match s {
                    CellStatus::Done(r) => Some(r.clone()),
                    CellStatus::Failed(_) => None,
                })
                .collect();
            match EvalReport::merge(&group) {
                Some(merged) => {
                    table.push_str(&merged.table());
                    table.push('\n');
                    consolidated.push(merged);
                }
                None => {
                    table.push_str(&format!(
                        "{model} ({}%): no completed cells\n\n",
                        fraction * 100.0
                    ));
                }
            }
        }
    }
    for (key, status) in &cells {
        if let CellStatus::Failed(msg) = status {
            table.push_str(&format!("cell {}: FAILED: {msg}\n", key.dir_name()));
        }
    }

    let table_path = plan.out_dir.join(CONSOLIDATED_FILE);
    std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    Ok(ExperimentOutcome {
        cells,
        consolidated,
        table,
        table_path,
    })
}
