//! Oriented image planes and plane/plane intersection.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Residual below which two planes count as parallel / a point counts as
/// lying on a plane.
pub(crate) const GEOM_EPS: f64 = 1e-9;

/// An oriented, pixelated 2D plane embedded in 3D millimeter space.
///
/// `origin` is the world position of the anchor pixel center, where the
/// anchor is pixel `(size.0 / 2, size.1 / 2)`. `axes[0]` points along
/// increasing row index, `axes[1]` along increasing column index.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPlane {
    pub origin: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub axes: [Vector3<f64>; 2],
    /// (row, col) spacing in mm/pixel.
    pub pixel_spacing: (f64, f64),
    /// (rows, cols).
    pub size: (usize, usize),
}

impl ViewPlane {
    /// Builds a plane from the anchor origin and the two in-plane axes;
    /// the normal is `axes[0] x axes[1]`.
    pub fn new(
        origin: Vector3<f64>,
        row_axis: Vector3<f64>,
        col_axis: Vector3<f64>,
        pixel_spacing: (f64, f64),
        size: (usize, usize),
    ) -> Result<Self> {
        let plane = ViewPlane {
            origin,
            normal: row_axis.cross(&col_axis),
            axes: [row_axis, col_axis],
            pixel_spacing,
            size,
        };
        plane.validate()?;
        Ok(plane)
    }

    pub fn validate(&self) -> Result<()> {
        let [u, v] = self.axes;
        let checks = [
            ((u.norm() - 1.0).abs() < 1e-6, "row axis not unit length"),
            ((v.norm() - 1.0).abs() < 1e-6, "col axis not unit length"),
            (u.dot(&v).abs() < 1e-6, "in-plane axes not orthogonal"),
            (
                (self.normal.norm() - 1.0).abs() < 1e-6,
                "normal not unit length",
            ),
            (
                self.normal.dot(&u).abs() < 1e-6 && self.normal.dot(&v).abs() < 1e-6,
                "normal not perpendicular to in-plane axes",
            ),
            (
                self.pixel_spacing.0 > 0.0 && self.pixel_spacing.1 > 0.0,
                "pixel spacing must be positive",
            ),
            (self.size.0 > 0 && self.size.1 > 0, "empty plane size"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidInput(format!("view plane: {msg}")));
            }
        }
        Ok(())
    }

    /// Pixel whose center maps onto `origin`.
    pub fn anchor(&self) -> (usize, usize) {
        (self.size.0 / 2, self.size.1 / 2)
    }

    /// World position of a (fractional) pixel index.
    pub fn pixel_to_world(&self, row: f64, col: f64) -> Vector3<f64> {
        let (ar, ac) = self.anchor();
        self.origin
            + self.axes[0] * ((row - ar as f64) * self.pixel_spacing.0)
            + self.axes[1] * ((col - ac as f64) * self.pixel_spacing.1)
    }

    /// Orthogonal projection of a world point into fractional pixel indices.
    pub fn world_to_pixel(&self, p: &Vector3<f64>) -> (f64, f64) {
        let d = p - self.origin;
        let (ar, ac) = self.anchor();
        (
            ar as f64 + d.dot(&self.axes[0]) / self.pixel_spacing.0,
            ac as f64 + d.dot(&self.axes[1]) / self.pixel_spacing.1,
        )
    }

    /// Signed distance from `p` to the plane.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.origin).dot(&self.normal)
    }
}

/// Line where two planes meet.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionLine {
    pub point: Vector3<f64>,
    /// Unit direction.
    pub direction: Vector3<f64>,
}

impl IntersectionLine {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.point + self.direction * t
    }
}

/// Intersects two planes. Errors if they are (numerically) parallel.
pub fn plane_intersection(a: &ViewPlane, b: &ViewPlane) -> Result<IntersectionLine> {
    let d = a.normal.cross(&b.normal);
    let d2 = d.norm_squared();
    if d2.sqrt() < GEOM_EPS {
        return Err(Error::DegenerateGeometry(
            "planes are parallel, no intersection line".into(),
        ));
    }
    let ba = a.normal.dot(&a.origin);
    let bb = b.normal.dot(&b.origin);
    // Point on both planes with minimal norm offset along d.
    let point = (b.normal.cross(&d) * ba + d.cross(&a.normal) * bb) / d2;
    debug_assert!(a.signed_distance(&point).abs() < 1e-6);
    debug_assert!(b.signed_distance(&point).abs() < 1e-6);
    Ok(IntersectionLine {
        point,
        direction: d / d2.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn xy_plane() -> ViewPlane {
        ViewPlane::new(
            Vector3::zeros(),
            Vector3::x(),
            Vector3::y(),
            (1.8, 1.8),
            (128, 128),
        )
        .unwrap()
    }

    #[test]
    fn pixel_world_round_trip() {
        let p = xy_plane();
        let w = p.pixel_to_world(10.0, 20.0);
        let (r, c) = p.world_to_pixel(&w);
        assert_abs_diff_eq!(r, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c, 20.0, epsilon = 1e-12);
        // anchor pixel sits on the origin
        let a = p.pixel_to_world(64.0, 64.0);
        assert_abs_diff_eq!(a.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn intersection_line_lies_on_both_planes() {
        let a = xy_plane();
        let b = ViewPlane::new(
            Vector3::new(3.0, -1.0, 0.0),
            Vector3::z(),
            Vector3::y(),
            (1.8, 1.8),
            (128, 128),
        )
        .unwrap();
        let line = plane_intersection(&a, &b).unwrap();
        for t in [-10.0, 0.0, 25.0] {
            let p = line.at(t);
            assert!(a.signed_distance(&p).abs() < 1e-9);
            assert!(b.signed_distance(&p).abs() < 1e-9);
        }
        assert_abs_diff_eq!(line.direction.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn parallel_planes_error() {
        let a = xy_plane();
        let mut b = xy_plane();
        b.origin = Vector3::new(0.0, 0.0, 5.0);
        let err = plane_intersection(&a, &b).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry(_)));
    }

    #[test]
    fn bad_axes_rejected() {
        let err = ViewPlane::new(
            Vector3::zeros(),
            Vector3::x() * 2.0,
            Vector3::y(),
            (1.8, 1.8),
            (8, 8),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }
}
