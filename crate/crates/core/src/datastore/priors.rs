//! Shape-code cache: one `priors/<id>.f32le` per subject holding the four
//! view codes (LA1, LA2, LA3, Mid-V) back to back.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::io::{read_f32le, write_f32le};
use crate::error::{Error, Result};

/// View count per prior file, in the order LA1, LA2, LA3, Mid-V.
pub const PRIOR_VIEWS: usize = 4;

pub fn priors_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.f32le"))
}

/// Writes a subject's `(4, latent_dim)` code matrix.
pub fn save_priors(dir: &Path, id: &str, codes: &Array2<f32>) -> Result<PathBuf> {
    if codes.nrows() != PRIOR_VIEWS {
        return Err(Error::ShapeMismatch {
            expected: format!("({PRIOR_VIEWS}, latent_dim)"),
            actual: format!("{:?}", codes.dim()),
        });
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = priors_path(dir, id);
    let owned;
    let slice = match codes.as_slice() {
        Some(s) => s,
        None => {
            owned = codes.to_owned();
            owned.as_slice().unwrap()
        }
    };
    write_f32le(&path, slice)?;
    Ok(path)
}

pub fn load_priors(dir: &Path, id: &str, latent_dim: usize) -> Result<Array2<f32>> {
    let path = priors_path(dir, id);
    let data = read_f32le(&path, PRIOR_VIEWS * latent_dim)?;
    Ok(Array2::from_shape_vec((PRIOR_VIEWS, latent_dim), data).unwrap())
}
