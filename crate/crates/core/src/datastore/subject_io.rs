//! Subject directory round-trip: raw arrays plus a `meta` sidecar.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::io::{read_f32le, read_mask_u8, write_atomic, write_f32le, write_mask_u8};
use crate::error::{Error, Result};
use crate::geometry::ViewPlane;
use crate::phantom::{Subject, TargetIndices};

/// Sidecar form of a [`ViewPlane`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub origin: [f64; 3],
    pub row_axis: [f64; 3],
    pub col_axis: [f64; 3],
    pub pixel_spacing: [f64; 2],
    pub size: [usize; 2],
}

impl From<&ViewPlane> for PlaneRecord {
    fn from(p: &ViewPlane) -> Self {
        PlaneRecord {
            origin: p.origin.into(),
            row_axis: p.axes[0].into(),
            col_axis: p.axes[1].into(),
            pixel_spacing: [p.pixel_spacing.0, p.pixel_spacing.1],
            size: [p.size.0, p.size.1],
        }
    }
}

impl PlaneRecord {
    pub fn to_plane(&self) -> Result<ViewPlane> {
        ViewPlane::new(
            Vector3::from(self.origin),
            Vector3::from(self.row_axis),
            Vector3::from(self.col_axis),
            (self.pixel_spacing[0], self.pixel_spacing[1]),
            (self.size[0], self.size[1]),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct SubjectMeta {
    id: String,
    spacing_mm: [f64; 3],
    n_slices: usize,
    image_size: usize,
    target_indices: TargetIndices,
    la_planes: Vec<PlaneRecord>,
    sa_planes: Vec<PlaneRecord>,
}

/// Files every subject directory must contain.
pub const SUBJECT_FILES: [&str; 10] = [
    "meta",
    "sa_img.f32le",
    "sa_msk.u8",
    "la1_img.f32le",
    "la1_msk.u8",
    "la2_img.f32le",
    "la2_msk.u8",
    "la3_img.f32le",
    "la3_msk.u8",
    "targets.u8",
];

fn targets_bytes(subject: &Subject) -> Vec<u8> {
    let mut out = Vec::new();
    for m in subject.target_masks() {
        out.extend(m.iter().copied());
    }
    out
}

pub fn write_subject(subject: &Subject, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = SubjectMeta {
        id: subject.id.clone(),
        spacing_mm: subject.spacing_mm,
        n_slices: subject.n_slices(),
        image_size: subject.sa_images.len_of(Axis(1)),
        target_indices: subject.target_indices,
        la_planes: subject.la_planes.iter().map(PlaneRecord::from).collect(),
        sa_planes: subject.sa_planes.iter().map(PlaneRecord::from).collect(),
    };
    let meta_text = toml::to_string(&meta).expect("subject meta serializes");
    write_atomic(&dir.join("meta"), meta_text.as_bytes())?;

    write_f32le(&dir.join("sa_img.f32le"), subject.sa_images.as_slice().unwrap())?;
    write_mask_u8(&dir.join("sa_msk.u8"), subject.sa_masks.as_slice().unwrap())?;
    for k in 0..3 {
        write_f32le(
            &dir.join(format!("la{}_img.f32le", k + 1)),
            subject.la_images[k].as_slice().unwrap(),
        )?;
        write_mask_u8(
            &dir.join(format!("la{}_msk.u8", k + 1)),
            subject.la_masks[k].as_slice().unwrap(),
        )?;
    }
    write_mask_u8(&dir.join("targets.u8"), &targets_bytes(subject))
}

pub fn read_subject(dir: &Path) -> Result<Subject> {
    let meta_path = dir.join("meta");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SubjectMeta = toml::from_str(&meta_text).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        detail: e.to_string(),
    })?;
    let (s, n) = (meta.n_slices, meta.image_size);
    let corrupt = |detail: String| Error::Corrupt {
        path: meta_path.clone(),
        detail,
    };
    if meta.la_planes.len() != 3 {
        return Err(corrupt(format!("{} LA planes, expected 3", meta.la_planes.len())));
    }
    if meta.sa_planes.len() != s {
        return Err(corrupt(format!(
            "{} SA planes for {s} slices",
            meta.sa_planes.len()
        )));
    }
    let t = meta.target_indices;
    if [t.apical, t.mid, t.basal].iter().any(|&i| i >= s) {
        return Err(corrupt(format!("target indices {t:?} outside stack of {s}")));
    }

    let sa_images = Array3::from_shape_vec(
        (s, n, n),
        read_f32le(&dir.join("sa_img.f32le"), s * n * n)?,
    )
    .unwrap();
    let sa_masks =
        Array3::from_shape_vec((s, n, n), read_mask_u8(&dir.join("sa_msk.u8"), s * n * n)?)
            .unwrap();
    let mut la_images = Vec::with_capacity(3);
    let mut la_masks = Vec::with_capacity(3);
    for k in 0..3 {
        la_images.push(
            Array2::from_shape_vec(
                (n, n),
                read_f32le(&dir.join(format!("la{}_img.f32le", k + 1)), n * n)?,
            )
            .unwrap(),
        );
        la_masks.push(
            Array2::from_shape_vec(
                (n, n),
                read_mask_u8(&dir.join(format!("la{}_msk.u8", k + 1)), n * n)?,
            )
            .unwrap(),
        );
    }

    let mut la_planes = Vec::with_capacity(3);
    for p in &meta.la_planes {
        la_planes.push(p.to_plane()?);
    }
    let sa_planes = meta
        .sa_planes
        .iter()
        .map(PlaneRecord::to_plane)
        .collect::<Result<Vec<_>>>()?;

    let subject = Subject {
        id: meta.id,
        la_images: la_images.try_into().unwrap(),
        la_masks: la_masks.try_into().unwrap(),
        la_planes: la_planes.try_into().unwrap(),
        sa_images,
        sa_masks,
        sa_planes,
        target_indices: meta.target_indices,
        spacing_mm: meta.spacing_mm,
    };

    // `targets.u8` duplicates the six target masks; verify agreement so a
    // corrupted copy can't silently diverge from the stacks.
    let targets_path = dir.join("targets.u8");
    let stored = read_mask_u8(&targets_path, 6 * n * n)?;
    if stored != targets_bytes(&subject) {
        return Err(Error::Corrupt {
            path: targets_path,
            detail: "target masks disagree with the LA/SA stacks".into(),
        });
    }
    Ok(subject)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_subject, sample_anatomy, AnatomyRanges, ViewConfig};

    fn subject() -> Subject {
        let anatomy = sample_anatomy(1, &AnatomyRanges::default()).unwrap();
        generate_subject(&anatomy, &ViewConfig::default(), 1).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = subject();
        write_subject(&s, dir.path()).unwrap();
        let back = read_subject(dir.path()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let s = subject();
        write_subject(&s, d1.path()).unwrap();
        write_subject(&read_subject(d1.path()).unwrap(), d2.path()).unwrap();
        for f in SUBJECT_FILES {
            let a = fs::read(d1.path().join(f)).unwrap();
            let b = fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs after a read/write cycle");
        }
    }

    #[test]
    fn truncated_raw_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        write_subject(&subject(), dir.path()).unwrap();
        let path = dir.path().join("la2_img.f32le");
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        let err = read_subject(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }), "{err}");
        assert!(err.to_string().contains("la2_img.f32le"));
    }

    #[test]
    fn missing_file_is_not_found_with_path() {
        let dir = tempfile::tempdir().unwrap();
        write_subject(&subject(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("sa_msk.u8")).unwrap();
        let err = read_subject(dir.path()).unwrap_err();
        assert!(matches!(err, Error::NotFound { .. }), "{err}");
        assert!(err.to_string().contains("sa_msk.u8"));
    }

    #[test]
    fn tampered_targets_copy_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        write_subject(&subject(), dir.path()).unwrap();
        let path = dir.path().join("targets.u8");
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        fs::write(&path, &bytes).unwrap();
        let err = read_subject(dir.path()).unwrap_err();
        assert!(err.to_string().contains("disagree"), "{err}");
    }

    #[test]
    fn tampered_meta_indices_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_subject(&subject(), dir.path()).unwrap();
        let path = dir.path().join("meta");
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("mid = ", "mid = 99");
        fs::write(&path, text).unwrap();
        assert!(read_subject(dir.path()).is_err());
    }
}
