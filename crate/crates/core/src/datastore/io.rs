//! Raw little-endian array files and atomic writes.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".tmp");
    PathBuf::from(name)
}

/// Writes via a sibling temp file + rename, so readers never observe a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_f32le(path: &Path, data: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &buf)
}

pub fn read_f32le(path: &Path, expected_len: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::Corrupt {
            path: path.into(),
            detail: format!(
                "{} bytes on disk, expected {} ({expected_len} f32 values)",
                bytes.len(),
                expected_len * 4
            ),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_mask_u8(path: &Path, data: &[u8]) -> Result<()> {
    write_atomic(path, data)
}

pub fn read_mask_u8(path: &Path, expected_len: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected_len {
        return Err(Error::Corrupt {
            path: path.into(),
            detail: format!("{} bytes on disk, expected {expected_len}", bytes.len()),
        });
    }
    if let Some(bad) = bytes.iter().find(|&&v| v > 1) {
        return Err(Error::Corrupt {
            path: path.into(),
            detail: format!("mask value {bad} outside {{0, 1}}"),
        });
    }
    Ok(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::new_with_prefix(bytes).finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.f32le");
        let data = vec![0.0f32, -1.5, f32::MIN_POSITIVE, 3.0e38, -0.0];
        write_f32le(&path, &data).unwrap();
        let back = read_f32le(&path, data.len()).unwrap();
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn short_file_is_corrupt_with_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.u8");
        write_mask_u8(&path, &vec![1u8; 128 * 127]).unwrap();
        let err = read_mask_u8(&path, 128 * 128).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }), "{err}");
        assert!(err.to_string().contains("16256"));
    }

    #[test]
    fn nonbinary_mask_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.u8");
        write_mask_u8(&path, &[0, 1, 2, 0]).unwrap();
        assert!(read_mask_u8(&path, 4).is_err());
    }

    #[test]
    fn missing_file_is_not_found() {
        let err = read_f32le(Path::new("/nonexistent/q.f32le"), 4).unwrap_err();
        assert!(matches!(err, Error::NotFound { .. }));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
