//! ROI cropping around a world-space center point.

use nalgebra::Vector3;
use ndarray::Array2;

use super::plane::ViewPlane;
use crate::error::{Error, Result};

/// Crops `image` and `mask` to `out_size x out_size` so that output pixel
/// `(out_size/2, out_size/2)` is the source pixel nearest to `center`.
/// Out-of-bounds regions are zero-padded; the returned plane describes the
/// cropped grid.
pub fn crop_to_roi(
    image: &Array2<f32>,
    mask: &Array2<u8>,
    plane: &ViewPlane,
    center: &Vector3<f64>,
    out_size: usize,
) -> Result<(Array2<f32>, Array2<u8>, ViewPlane)> {
    let (h, w) = image.dim();
    if mask.dim() != (h, w) || plane.size != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: format!("image/mask/plane all {h}x{w}"),
            actual: format!("mask {:?}, plane {:?}", mask.dim(), plane.size),
        });
    }
    let (r, c) = plane.world_to_pixel(center);
    if !((-0.5..h as f64 - 0.5).contains(&r) && (-0.5..w as f64 - 0.5).contains(&c)) {
        return Err(Error::InvalidInput(format!(
            "ROI center maps to pixel ({r:.2}, {c:.2}), outside the {h}x{w} source grid"
        )));
    }
    let r0 = r.round() as i64;
    let c0 = c.round() as i64;
    let half = (out_size / 2) as i64;

    let mut out_img = Array2::<f32>::zeros((out_size, out_size));
    let mut out_msk = Array2::<u8>::zeros((out_size, out_size));
    for i in 0..out_size as i64 {
        let sr = r0 - half + i;
        if sr < 0 || sr >= h as i64 {
            continue;
        }
        for j in 0..out_size as i64 {
            let sc = c0 - half + j;
            if sc < 0 || sc >= w as i64 {
                continue;
            }
            out_img[(i as usize, j as usize)] = image[(sr as usize, sc as usize)];
            out_msk[(i as usize, j as usize)] = mask[(sr as usize, sc as usize)];
        }
    }

    let out_plane = ViewPlane {
        origin: plane.pixel_to_world(r0 as f64, c0 as f64),
        normal: plane.normal,
        axes: plane.axes,
        pixel_spacing: plane.pixel_spacing,
        size: (out_size, out_size),
    };
    Ok((out_img, out_msk, out_plane))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn plane(h: usize, w: usize) -> ViewPlane {
        ViewPlane::new(
            Vector3::zeros(),
            Vector3::x(),
            Vector3::y(),
            (1.8, 1.8),
            (h, w),
        )
        .unwrap()
    }

    fn ramp(h: usize, w: usize) -> (Array2<f32>, Array2<u8>) {
        let img = Array2::from_shape_fn((h, w), |(i, j)| (i * w + j) as f32);
        let msk = Array2::from_shape_fn((h, w), |(i, j)| ((i + j) % 2) as u8);
        (img, msk)
    }

    #[test]
    fn identity_crop() {
        let p = plane(128, 128);
        let (img, msk) = ramp(128, 128);
        let center = p.pixel_to_world(64.0, 64.0);
        let (ci, cm, cp) = crop_to_roi(&img, &msk, &p, &center, 128).unwrap();
        assert_eq!(ci, img);
        assert_eq!(cm, msk);
        assert_eq!(cp, p);
    }

    #[test]
    fn crop_256_at_pixel_64_is_top_left_block() {
        let p = plane(256, 256);
        let (img, msk) = ramp(256, 256);
        let center = p.pixel_to_world(64.0, 64.0);
        let (ci, cm, _) = crop_to_roi(&img, &msk, &p, &center, 128).unwrap();
        for i in 0..128 {
            for j in 0..128 {
                assert_eq!(ci[(i, j)], img[(i, j)]);
                assert_eq!(cm[(i, j)], msk[(i, j)]);
            }
        }
    }

    #[test]
    fn border_crop_zero_pads_and_mask_stays_binary() {
        let p = plane(128, 128);
        let (img, mut msk) = ramp(128, 128);
        msk.fill(1);
        let center = p.pixel_to_world(5.0, 5.0);
        let (ci, cm, _) = crop_to_roi(&img, &msk, &p, &center, 128).unwrap();
        // rows above the source map to padding
        for i in 0..(64 - 5) {
            for j in 0..128 {
                assert_eq!(ci[(i, j)], 0.0);
                assert_eq!(cm[(i, j)], 0);
            }
        }
        assert!(cm.iter().all(|&v| v <= 1));
        // pixel at the new anchor equals source (5,5)
        assert_eq!(ci[(64, 64)], img[(5, 5)]);
    }

    #[test]
    fn crop_is_idempotent_at_same_center() {
        let p = plane(160, 160);
        let (img, msk) = ramp(160, 160);
        let center = p.pixel_to_world(71.3, 80.9);
        let (i1, m1, p1) = crop_to_roi(&img, &msk, &p, &center, 128).unwrap();
        let (i2, m2, p2) = crop_to_roi(&i1, &m1, &p1, &center, 128).unwrap();
        assert_eq!(i1, i2);
        assert_eq!(m1, m2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn center_outside_grid_is_rejected() {
        let p = plane(128, 128);
        let (img, msk) = ramp(128, 128);
        let center = p.pixel_to_world(200.0, 64.0);
        assert!(matches!(
            crop_to_roi(&img, &msk, &p, &center, 128),
            Err(Error::InvalidInput(_))
        ));
    }
}
