//! Dataset generation: sample, rasterize and write a subject corpus.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::anatomy::{sample_anatomy, AnatomyRanges};
use super::subject::{generate_subject, ViewConfig};
use crate::blocks::{derive_seed, stream};
use crate::datastore::{
    save_manifest, sha256_hex, write_subject, DatasetManifest, Split, SubjectEntry,
    MANIFEST_VERSION,
};
use crate::error::{Error, Result};

/// Smallest corpus that still leaves both splits nonempty and the trainer a
/// few subjects to batch.
pub const MIN_SUBJECTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenOptions {
    pub n_subjects: usize,
    /// Recorded verbatim in the manifest; excluded from the config hash.
    #[serde(skip)]
    pub seed: u64,
    /// Training fraction of the train/test split.
    pub split_fraction: f64,
    /// Replace an existing nonempty output directory.
    #[serde(skip)]
    pub force: bool,
    pub ranges: AnatomyRanges,
    pub view_config: ViewConfig,
}

impl GenOptions {
    pub fn new(n_subjects: usize, seed: u64) -> Self {
        GenOptions {
            n_subjects,
            seed,
            split_fraction: 0.8,
            force: false,
            ranges: AnatomyRanges::default(),
            view_config: ViewConfig::default(),
        }
    }

    /// Checks all option invariants; returns the training-split size.
    pub fn validate(&self) -> Result<usize> {
        if self.n_subjects < MIN_SUBJECTS {
            return Err(Error::Config(format!(
                "n_subjects = {} below the minimum of {MIN_SUBJECTS}",
                self.n_subjects
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction {} outside (0, 1)",
                self.split_fraction
            )));
        }
        let n_train = (self.split_fraction * self.n_subjects as f64).ceil() as usize;
        if !(1..self.n_subjects).contains(&n_train) {
            return Err(Error::Config(format!(
                "split_fraction {} leaves an empty split for {} subjects",
                self.split_fraction, self.n_subjects
            )));
        }
        self.ranges.validate()?;
        self.view_config.validate()?;
        Ok(n_train)
    }

    /// Hash over everything that shapes the generated data except the seed
    /// (which the manifest records verbatim).
    fn config_hash(&self) -> String {
        let text = toml::to_string(self).expect("gen options serialize");
        sha256_hex(text.as_bytes())
    }
}

/// Generates `opts.n_subjects` subjects under `out_dir` and finalizes the
/// manifest last, so a valid manifest implies a complete dataset.
pub fn generate_dataset(opts: &GenOptions, out_dir: &Path) -> Result<DatasetManifest> {
    let n_train = opts.validate()?;

    if out_dir.exists() && fs::read_dir(out_dir).map_err(|e| Error::io(out_dir, e))?.count() > 0
    {
        if !opts.force {
            return Err(Error::OutputExists(out_dir.into()));
        }
        fs::remove_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut order: Vec<usize> = (0..opts.n_subjects).collect();
    order.shuffle(&mut stream(opts.seed, "split"));
    let mut split = vec![Split::Test; opts.n_subjects];
    for &i in order.iter().take(n_train) {
        split[i] = Split::Train;
    }

    let mut subjects = Vec::with_capacity(opts.n_subjects);
    for i in 0..opts.n_subjects {
        let subject_seed = derive_seed(opts.seed, "subject", i as u64);
        let anatomy = sample_anatomy(subject_seed, &opts.ranges)?;
        let mut subject = generate_subject(&anatomy, &opts.view_config, subject_seed)?;
        subject.id = format!("s{i:04}");
        write_subject(&subject, &out_dir.join(&subject.id))?;
        subjects.push(SubjectEntry {
            id: subject.id.clone(),
            seed: subject_seed,
            path: subject.id,
            split: split[i],
        });
    }

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        seed: opts.seed,
        config_hash: opts.config_hash(),
        spacing_mm: [
            opts.view_config.pixel_spacing_mm,
            opts.view_config.pixel_spacing_mm,
            opts.view_config.slice_spacing_mm,
        ],
        image_size: opts.view_config.image_size,
        subjects,
    };
    save_manifest(&manifest, out_dir)?;
    Ok(manifest)
}
