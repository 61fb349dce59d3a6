//! Append-only per-epoch loss records.
//!
//! Plain CSV: a header naming the columns, then one row per epoch. Values
//! are written with Rust's shortest round-trip float formatting, so a
//! parsed file reproduces the logged numbers bit for bit.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    /// Column values in header order; `values[0]` is the total loss.
    pub values: Vec<f64>,
}

pub(crate) fn append_curve(
    path: &Path,
    header: &str,
    epoch: usize,
    values: &[f64],
) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    if fresh {
        line.push_str(header);
        line.push('\n');
    }
    line.push_str(&epoch.to_string());
    for v in values {
        line.push(',');
        line.push_str(&format!("{v}"));
    }
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a curve file back as (header, rows).
pub fn read_curves(path: &Path) -> Result<(String, Vec<CurveRow>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |detail: String| Error::Parse {
        path: path.to_path_buf(),
        detail,
    };
    let mut lines = text.lines();
    let header = lines
        .next()
        .filter(|h| h.starts_with("epoch,"))
        .ok_or_else(|| parse_err("missing curve header".into()))?
        .to_string();
    let n_cols = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let epoch = fields
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| parse_err(format!("bad epoch on row {}", i + 1)))?;
        let values = fields
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(format!("bad value on row {}: {e}", i + 1)))?;
        if values.len() + 1 != n_cols {
            return Err(parse_err(format!(
                "row {} has {} columns, header has {n_cols}",
                i + 1,
                values.len() + 1
            )));
        }
        rows.push(CurveRow { epoch, values });
    }
    Ok((header, rows))
}

/// Drops rows past `max_epoch`, repairing a file whose tail outran the
/// checkpoint. No-op when the file is absent or already consistent.
pub(crate) fn truncate_curves(path: &Path, max_epoch: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let (header, rows) = read_curves(path)?;
    if rows.iter().all(|r| r.epoch <= max_epoch) {
        return Ok(());
    }
    let mut text = header;
    text.push('\n');
    for r in rows.iter().filter(|r| r.epoch <= max_epoch) {
        text.push_str(&r.epoch.to_string());
        for v in &r.values {
            text.push(',');
            text.push_str(&format!("{v}"));
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
