//! Dataset manifest: subject registry, split assignment, subsampling.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::io::write_atomic;
use super::subject_io::SUBJECT_FILES;
use crate::blocks::stream;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!(
                "unknown split {other:?} (expected train or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    /// Seed the subject was generated from.
    pub seed: u64,
    /// Directory relative to the dataset root.
    pub path: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    /// Hash of the generator configuration (anatomy ranges, view layout,
    /// subject count, split fraction).
    pub config_hash: String,
    /// (row, col, slice) mm.
    pub spacing_mm: [f64; 3],
    pub image_size: usize,
    pub subjects: Vec<SubjectEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "manifest format version {} unsupported (this build reads {MANIFEST_VERSION})",
                self.format_version
            )));
        }
        if self.subjects.is_empty() {
            return Err(Error::Config("manifest lists no subjects".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate subject id {:?}", s.id)));
            }
        }
        Ok(())
    }

    pub fn ids_in(&self, split: Split) -> Vec<&str> {
        self.subjects
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.id.as_str())
            .collect()
    }

    pub fn entry(&self, id: &str) -> Option<&SubjectEntry> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn subject_dir(&self, root: &Path, id: &str) -> Result<PathBuf> {
        let entry = self.entry(id).ok_or_else(|| Error::InvalidInput(format!(
            "subject {id:?} not in manifest"
        )))?;
        Ok(root.join(&entry.path))
    }
}

pub fn save_manifest(manifest: &DatasetManifest, root: &Path) -> Result<PathBuf> {
    manifest.validate()?;
    let text = toml::to_string(manifest).expect("manifest serializes");
    let path = root.join(MANIFEST_FILE);
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Loads and validates `root/manifest`, checking that every referenced
/// subject file exists.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    manifest.validate()?;
    for s in &manifest.subjects {
        let dir = root.join(&s.path);
        for f in SUBJECT_FILES {
            let fp = dir.join(f);
            if !fp.is_file() {
                return Err(Error::NotFound { path: fp });
            }
        }
    }
    Ok(manifest)
}

/// Uniform sample without replacement of `ceil(fraction * n)` training
/// subjects; the test split is untouched. Deterministic in `seed`; subject
/// order is preserved.
pub fn subsample_split(
    manifest: &DatasetManifest,
    fraction: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "data fraction {fraction} outside (0, 1]"
        )));
    }
    let train: Vec<usize> = manifest
        .subjects
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    let k = (fraction * train.len() as f64).ceil() as usize;
    if k == 0 {
        return Err(Error::Config(
            "data fraction selects zero training subjects".into(),
        ));
    }
    let mut order = train;
    order.shuffle(&mut stream(seed, "subsample"));
    let keep: HashSet<usize> = order.into_iter().take(k).collect();
    let subjects = manifest
        .subjects
        .iter()
        .enumerate()
        .filter(|(i, s)| s.split == Split::Test || keep.contains(i))
        .map(|(_, s)| s.clone())
        .collect();
    Ok(DatasetManifest {
        subjects,
        ..manifest.clone()
    })
}
