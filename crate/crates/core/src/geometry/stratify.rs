//! Apex/mid/base stratification of an SA mask stack.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceRegion {
    Apex,
    Mid,
    Base,
    Empty,
}

impl std::fmt::Display for SliceRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SliceRegion::Apex => "apex",
            SliceRegion::Mid => "mid",
            SliceRegion::Base => "base",
            SliceRegion::Empty => "empty",
        };
        f.write_str(s)
    }
}

/// Labels each slice of an apex→base ordered stack. Myocardium-bearing
/// slices are split into contiguous index thirds (apex / mid / base); when
/// the count is not divisible by 3 the remainder goes to mid. Empty slices
/// are labeled [`SliceRegion::Empty`].
pub fn stratify_slices(sa_masks: &[ArrayView2<u8>]) -> Result<Vec<SliceRegion>> {
    let nonempty: Vec<usize> = sa_masks
        .iter()
        .enumerate()
        .filter(|(_, m)| m.iter().any(|&v| v != 0))
        .map(|(i, _)| i)
        .collect();
    if nonempty.is_empty() {
        return Err(Error::InvalidInput(
            "cannot stratify: every slice in the stack is empty".into(),
        ));
    }
    let n = nonempty.len();
    let third = n / 3;
    let mut labels = vec![SliceRegion::Empty; sa_masks.len()];
    for (k, &slice_idx) in nonempty.iter().enumerate() {
        labels[slice_idx] = if k < third {
            SliceRegion::Apex
        } else if k >= n - third {
            SliceRegion::Base
        } else {
            SliceRegion::Mid
        };
    }
    Ok(labels)
}
