//! Whole-subject generation: posed view planes, rasterized stacks, targets.

use nalgebra::Vector3;
use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::anatomy::AnatomyParams;
use super::raster::rasterize_view;
use super::{APEX_SLICE_OFFSET_MM, PIXEL_SPACING_MM, SLICE_SPACING_MM};
use crate::blocks::{derive_seed, stream};
use crate::error::{Error, Result};
use crate::geometry::{crop_to_roi, la_intersection_center, ViewPlane};

/// View-plane layout shared by every subject of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    /// Final side length of every view, pixels.
    pub image_size: usize,
    pub pixel_spacing_mm: f64,
    pub slice_spacing_mm: f64,
    /// First SA slice this far above the apex bottom along the long axis.
    pub apex_offset_mm: f64,
    /// SA slices are rasterized at this size, then ROI-cropped to
    /// `image_size` around the LA intersection center.
    pub sa_raster_size: usize,
    /// The SA grid center is offset from the long axis by a per-subject
    /// uniform draw in [-jitter, jitter]^2 mm, so the crop has work to do.
    pub sa_center_jitter_mm: f64,
    /// Azimuths of the three LA planes about the long axis, degrees.
    pub la_azimuth_deg: [f64; 3],
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            image_size: 128,
            pixel_spacing_mm: PIXEL_SPACING_MM,
            slice_spacing_mm: SLICE_SPACING_MM,
            apex_offset_mm: APEX_SLICE_OFFSET_MM,
            sa_raster_size: 160,
            sa_center_jitter_mm: 8.0,
            la_azimuth_deg: [0.0, 60.0, 120.0],
        }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (
                self.image_size >= 16 && self.image_size % 2 == 0,
                "image_size must be even and at least 16",
            ),
            (
                self.sa_raster_size >= self.image_size && self.sa_raster_size % 2 == 0,
                "sa_raster_size must be even and at least image_size",
            ),
            (
                self.pixel_spacing_mm > 0.0 && self.slice_spacing_mm > 0.0,
                "spacings must be positive",
            ),
            (
                self.apex_offset_mm > 0.0 && self.apex_offset_mm <= self.slice_spacing_mm,
                "apex_offset_mm must lie in (0, slice_spacing_mm]",
            ),
            (
                self.sa_center_jitter_mm >= 0.0,
                "sa_center_jitter_mm must be nonnegative",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(format!("view config: {msg}")));
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                let d = (self.la_azimuth_deg[i] - self.la_azimuth_deg[j]).rem_euclid(180.0);
                if d < 1.0 || d > 179.0 {
                    return Err(Error::Config(format!(
                        "view config: LA azimuths {} and {} are (near-)parallel",
                        self.la_azimuth_deg[i], self.la_azimuth_deg[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Stack indices of the three SA target slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetIndices {
    pub apical: usize,
    pub mid: usize,
    pub basal: usize,
}

/// One synthetic subject: three LA views, an SA stack, and the planes they
/// were rasterized on. All views derive from a single [`AnatomyParams`].
///
/// Source views feed the encoders in the order LA1, LA2, LA3, Mid-V SA;
/// target masks add the apical and basal SA slices as fifth and sixth.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub la_images: [Array2<f32>; 3],
    pub la_masks: [Array2<u8>; 3],
    pub la_planes: [ViewPlane; 3],
    /// (slice, row, col), apex to base.
    pub sa_images: Array3<f32>,
    pub sa_masks: Array3<u8>,
    pub sa_planes: Vec<ViewPlane>,
    pub target_indices: TargetIndices,
    /// (row, col, slice) spacing in mm.
    pub spacing_mm: [f64; 3],
}

impl Subject {
    pub fn n_slices(&self) -> usize {
        self.sa_images.len_of(Axis(0))
    }

    /// Encoder inputs X1..X4: LA1, LA2, LA3, Mid-V SA.
    pub fn source_views(&self) -> [ArrayView2<'_, f32>; 4] {
        [
            self.la_images[0].view(),
            self.la_images[1].view(),
            self.la_images[2].view(),
            self.sa_images.index_axis(Axis(0), self.target_indices.mid),
        ]
    }

    /// Decoder targets Y1..Y6: LA1, LA2, LA3, Mid-V, apical SA, basal SA.
    pub fn target_masks(&self) -> [ArrayView2<'_, u8>; 6] {
        [
            self.la_masks[0].view(),
            self.la_masks[1].view(),
            self.la_masks[2].view(),
            self.sa_masks.index_axis(Axis(0), self.target_indices.mid),
            self.sa_masks.index_axis(Axis(0), self.target_indices.apical),
            self.sa_masks.index_axis(Axis(0), self.target_indices.basal),
        ]
    }

    /// Plane of the Mid-V source view.
    pub fn mid_plane(&self) -> &ViewPlane {
        &self.sa_planes[self.target_indices.mid]
    }
}

/// SA slice planes keep clearances from the two horizontal creases of the
/// shell: the basal cut, and the cap/ring seam one apex-wall-thickness above
/// the apex bottom. A nearest-row lookup on an LA view reaches half a pixel
/// spacing along the axis (0.9 mm at defaults); within the cut clearance that
/// reach flips labels across the truncation, and just above the seam the wall
/// radius changes steeply enough (~ ex/sqrt(2 dz rz)) that the same reach
/// moves boundaries by multiple pixels. Clearances sized so cross-view label
/// agreement stays at the ordinary quantization floor (measured >= 0.968)
/// instead of dipping toward 0.94.
const CUT_CLEARANCE_MM: f64 = 1.0;
const SEAM_CLEARANCE_BELOW_MM: f64 = 1.0;
const SEAM_CLEARANCE_ABOVE_MM: f64 = 2.5;

/// Apex offset for this anatomy: the candidate nearest `cfg.apex_offset_mm`
/// (0.25 mm grid within [3, spacing-1]) whose slice grid clears both bands
/// while never bearing fewer slices than the configured offset would. When no
/// candidate clears both, keeps the cut clearance and maximizes the seam
/// margin; spacings too tight for the bands are left unadjusted.
fn effective_apex_offset(anatomy: &AnatomyParams, cfg: &ViewConfig) -> f64 {
    let sp = cfg.slice_spacing_mm;
    let o0 = cfg.apex_offset_mm;
    if sp < 6.0 {
        return o0;
    }
    let lv = anatomy.lv_length;
    let ta = anatomy.wall_thickness[0];
    let cut_margin = |o: f64| {
        let r = (lv - o).rem_euclid(sp);
        r.min(sp - r) - CUT_CLEARANCE_MM
    };
    let seam_margin = |o: f64| {
        // slice height above the seam, reduced mod spacing
        let r = (o - ta).rem_euclid(sp);
        (r - SEAM_CLEARANCE_ABOVE_MM).min(sp - SEAM_CLEARANCE_BELOW_MM - r)
    };
    let keeps_count = |o: f64| o <= o0 || (lv - o0).rem_euclid(sp) >= o - o0;

    let mut candidates: Vec<f64> = (0..)
        .map(|k| 3.0 + 0.25 * k as f64)
        .take_while(|&o| o <= sp - 1.0)
        .filter(|&o| keeps_count(o))
        .collect();
    candidates.sort_by(|a, b| {
        let (da, db) = ((a - o0).abs(), (b - o0).abs());
        da.partial_cmp(&db).unwrap().then(a.partial_cmp(b).unwrap())
    });
    if let Some(&o) = candidates
        .iter()
        .find(|&&o| cut_margin(o) >= 0.0 && seam_margin(o) >= 0.0)
    {
        return o;
    }
    candidates
        .into_iter()
        .filter(|&o| cut_margin(o) >= 0.0)
        .reduce(|best, o| if seam_margin(o) > seam_margin(best) { o } else { best })
        .unwrap_or(o0)
}

/// Local long-axis heights of the SA stack: one guaranteed-empty slice below
/// the apex, every slice from roughly `apex_offset_mm` above the apex bottom
/// to the basal cut, and one beyond the cut.
pub fn sa_stack_z_locals(anatomy: &AnatomyParams, cfg: &ViewConfig) -> Vec<f64> {
    let first = anatomy.apex_bottom_z() + effective_apex_offset(anatomy, cfg);
    let z_cut = anatomy.z_cut();
    let mut zs = vec![first - cfg.slice_spacing_mm];
    for k in 0.. {
        let z = first + k as f64 * cfg.slice_spacing_mm;
        zs.push(z);
        if z > z_cut {
            break;
        }
    }
    zs
}

/// Target slices at the 25/50/75th percentile positions (floor indexing)
/// of the myocardium-bearing slice list.
fn percentile_targets(bearing: &[usize]) -> TargetIndices {
    let last = (bearing.len() - 1) as f64;
    let pick = |q: f64| bearing[(q * last).floor() as usize];
    TargetIndices {
        apical: pick(0.25),
        mid: pick(0.5),
        basal: pick(0.75),
    }
}

/// Generates one subject. Deterministic in `(anatomy, cfg, seed)`; the id
/// defaults to `s{seed}` and may be renamed by the caller.
pub fn generate_subject(
    anatomy: &AnatomyParams,
    cfg: &ViewConfig,
    seed: u64,
) -> Result<Subject> {
    anatomy.validate()?;
    cfg.validate()?;

    let rot = anatomy.pose.rotation();
    let axis_dir = anatomy.long_axis_dir();
    let mid_z = 0.5 * (anatomy.apex_bottom_z() + anatomy.z_cut());
    let sp = (cfg.pixel_spacing_mm, cfg.pixel_spacing_mm);
    let n = cfg.image_size;

    // LA planes contain the long axis; rows run apex to base along it.
    let mut la_planes = Vec::with_capacity(3);
    let mut la_images = Vec::with_capacity(3);
    let mut la_masks = Vec::with_capacity(3);
    for (k, az_deg) in cfg.la_azimuth_deg.iter().enumerate() {
        let az = az_deg.to_radians();
        let col = rot * Vector3::new(az.cos(), az.sin(), 0.0);
        let plane = ViewPlane::new(anatomy.axis_point(mid_z), axis_dir, col, sp, (n, n))?;
        let (img, msk) = rasterize_view(anatomy, &plane, derive_seed(seed, "la", k as u64))?;
        la_planes.push(plane);
        la_images.push(img);
        la_masks.push(msk);
    }
    let la_planes: [ViewPlane; 3] = la_planes.try_into().unwrap();

    // SA stack, rasterized oversize on a jittered grid, then ROI-cropped
    // around the LA intersection center.
    let zs = sa_stack_z_locals(anatomy, cfg);
    let jit = cfg.sa_center_jitter_mm;
    let mut jrng = stream(seed, "sa_jitter");
    let (dx, dy) = (
        jrng.random_range(-jit..=jit),
        jrng.random_range(-jit..=jit),
    );
    let row = rot * Vector3::x();
    let col = rot * Vector3::y();
    let m = cfg.sa_raster_size;
    let mut sa_images = Array3::<f32>::zeros((zs.len(), n, n));
    let mut sa_masks = Array3::<u8>::zeros((zs.len(), n, n));
    let mut sa_planes = Vec::with_capacity(zs.len());
    for (i, &z) in zs.iter().enumerate() {
        let origin = anatomy.axis_point(z) + row * dx + col * dy;
        let raw_plane = ViewPlane::new(origin, row, col, sp, (m, m))?;
        let (raw_img, raw_msk) =
            rasterize_view(anatomy, &raw_plane, derive_seed(seed, "sa", i as u64))?;
        let center = la_intersection_center(&la_planes, &raw_plane)?;
        let (img, msk, plane) = crop_to_roi(&raw_img, &raw_msk, &raw_plane, &center, n)?;
        sa_images.index_axis_mut(Axis(0), i).assign(&img);
        sa_masks.index_axis_mut(Axis(0), i).assign(&msk);
        sa_planes.push(plane);
    }

    let bearing: Vec<usize> = (0..zs.len())
        .filter(|&i| sa_masks.index_axis(Axis(0), i).iter().any(|&v| v != 0))
        .collect();
    if bearing.len() < 3 {
        return Err(Error::Generation(format!(
            "only {} myocardium-bearing SA slices; need at least 3 for \
             apical/mid/basal targets",
            bearing.len()
        )));
    }

    Ok(Subject {
        id: format!("s{seed}"),
        la_images: la_images.try_into().unwrap(),
        la_masks: la_masks.try_into().unwrap(),
        la_planes,
        sa_images,
        sa_masks,
        sa_planes,
        target_indices: percentile_targets(&bearing),
        spacing_mm: [
            cfg.pixel_spacing_mm,
            cfg.pixel_spacing_mm,
            cfg.slice_spacing_mm,
        ],
    })
}
