//! Synthetic multi-view cardiac phantom: anatomy sampling, rasterization,
//! whole-subject generation and dataset layout.
//!
//! The anatomy is a truncated-ellipsoid myocardium shell posed in world
//! space; every view (three long-axis planes sharing the ventricle's long
//! axis plus a short-axis stack) is rasterized from the same shell, so
//! cross-view label consistency holds by construction.

mod anatomy;
mod dataset;
mod raster;
mod subject;

pub use anatomy::{sample_anatomy, AnatomyParams, AnatomyRanges, Intensity, Pose};
pub use dataset::{generate_dataset, GenOptions};
pub use raster::{rasterize_view, Tissue};
pub use subject::{generate_subject, sa_stack_z_locals, Subject, TargetIndices, ViewConfig};

/// Short-axis slice spacing, mm.
pub const SLICE_SPACING_MM: f64 = 10.0;
/// In-plane pixel spacing of every view, mm.
pub const PIXEL_SPACING_MM: f64 = 1.8;
/// Long-axis offset of the first SA slice above the apex bottom, mm. Deep
/// enough that the most apical slice's cross-section spans dozens of pixels
/// (>= ~200 mm^2 over the default anatomy ranges), so it never rasterizes
/// empty.
pub const APEX_SLICE_OFFSET_MM: f64 = 8.0;
/// Fewest myocardium-bearing SA slices a valid anatomy may produce.
pub const MIN_BEARING_SLICES: usize = 6;

/// Myocardium-bearing SA slice count for a ventricle of length `lv_length`
/// under the canonical stack alignment (first slice [`APEX_SLICE_OFFSET_MM`]
/// above the apex bottom, then every [`SLICE_SPACING_MM`]).
pub fn bearing_slice_count(lv_length: f64) -> usize {
    if lv_length < APEX_SLICE_OFFSET_MM {
        return 0;
    }
    ((lv_length - APEX_SLICE_OFFSET_MM) / SLICE_SPACING_MM).floor() as usize + 1
}

#[cfg(test)]
pub(crate) mod mask_checks {
    use ndarray::Array2;

    /// Floods the 4-connected component of `value` containing `start`;
    /// returns whether it touches the image border.
    fn flood(
        mask: &Array2<u8>,
        visited: &mut Array2<bool>,
        start: (usize, usize),
        value: u8,
    ) -> bool {
        let (h, w) = mask.dim();
        let mut touches_border = false;
        let mut stack = vec![start];
        visited[start] = true;
        while let Some((i, j)) = stack.pop() {
            if i == 0 || j == 0 || i == h - 1 || j == w - 1 {
                touches_border = true;
            }
            for (ni, nj) in [
                (i.wrapping_sub(1), j),
                (i + 1, j),
                (i, j.wrapping_sub(1)),
                (i, j + 1),
            ] {
                if ni < h && nj < w && !visited[(ni, nj)] && mask[(ni, nj)] == value {
                    visited[(ni, nj)] = true;
                    stack.push((ni, nj));
                }
            }
        }
        touches_border
    }

    /// (foreground component count, hole count), both 4-connected; a hole is
    /// a background component that never reaches the border.
    pub fn components_and_holes(mask: &Array2<u8>) -> (usize, usize) {
        let (h, w) = mask.dim();
        let mut vis_fg = Array2::from_elem((h, w), false);
        let mut vis_bg = Array2::from_elem((h, w), false);
        let (mut comps, mut holes) = (0usize, 0usize);
        for i in 0..h {
            for j in 0..w {
                if mask[(i, j)] != 0 && !vis_fg[(i, j)] {
                    comps += 1;
                    flood(mask, &mut vis_fg, (i, j), mask[(i, j)]);
                } else if mask[(i, j)] == 0
                    && !vis_bg[(i, j)]
                    && !flood(mask, &mut vis_bg, (i, j), 0)
                {
                    holes += 1;
                }
            }
        }
        (comps, holes)
    }

    pub fn mask_area_mm2(mask: &Array2<u8>, spacing: f64) -> f64 {
        mask.iter().filter(|&&v| v != 0).count() as f64 * spacing * spacing
    }

    #[test]
    fn ring_and_blobs_are_counted() {
        let mut m = Array2::<u8>::zeros((16, 16));
        // 4-connected ring with a hole
        for k in 4..=8 {
            m[(4, k)] = 1;
            m[(8, k)] = 1;
            m[(k, 4)] = 1;
            m[(k, 8)] = 1;
        }
        assert_eq!(components_and_holes(&m), (1, 1));
        // plus a separate solid blob: two components, still one hole
        m[(12, 12)] = 1;
        m[(12, 13)] = 1;
        assert_eq!(components_and_holes(&m), (2, 1));
        // ring = 2 full rows of 5 + 2 columns of 3 interior = 16 px, blob = 2 px
        assert_eq!(mask_area_mm2(&m, 2.0), 18.0 * 4.0);
    }

    #[test]
    fn open_c_shape_has_no_hole() {
        let mut m = Array2::<u8>::zeros((16, 16));
        for k in 4..=8 {
            m[(4, k)] = 1;
            m[(8, k)] = 1;
            m[(k, 4)] = 1;
        }
        assert_eq!(components_and_holes(&m), (1, 0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bearing_count_matches_hand_values() {
        // slices at 8, 18, ..., below or at lv_length
        assert_eq!(bearing_slice_count(72.8), 7);
        assert_eq!(bearing_slice_count(58.0), 6);
        assert_eq!(bearing_slice_count(57.9), 5);
        assert_eq!(bearing_slice_count(7.9), 0);
    }
}
