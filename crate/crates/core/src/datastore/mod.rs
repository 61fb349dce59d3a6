//! Bit-exact on-disk formats: subject directories, dataset manifests,
//! shape-code caches and training checkpoints.
//!
//! Arrays are raw little-endian files with dimensions recorded in sidecars,
//! so every round-trip is byte-identical and platform-independent. Writes
//! go through a temp-file + rename so readers never see partial data.

mod checkpoint;
mod io;
mod manifest;
mod priors;
mod subject_io;

pub use checkpoint::{
    apply_buffers, apply_params, collect_buffers, collect_params, load_checkpoint,
    restore_adam, save_checkpoint, snapshot_adam, AdamSnapshot, CheckpointData, ModelKind,
    NamedArray, RngState, CHECKPOINT_VERSION,
};
pub use io::{read_f32le, sha256_hex, write_atomic, write_f32le};
pub use manifest::{
    load_manifest, save_manifest, subsample_split, DatasetManifest, Split, SubjectEntry,
    MANIFEST_FILE, MANIFEST_VERSION,
};
pub use priors::{load_priors, priors_path, save_priors, PRIOR_VIEWS};
pub use subject_io::{read_subject, write_subject, PlaneRecord, SUBJECT_FILES};
