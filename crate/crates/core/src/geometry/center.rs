//! ROI centering from the long-axis plane intersections.

use nalgebra::{Matrix2, Vector2, Vector3};

use super::plane::{plane_intersection, ViewPlane};
use crate::error::{Error, Result};

/// Center of the region of interest on an SA slice: the point on `sa_plane`
/// minimizing the summed squared distance to the three LA/SA intersection
/// lines. When the lines are concurrent their common point is returned
/// exactly.
///
/// Errors if any LA plane is parallel to the SA plane, or if the three
/// intersection lines have no unique least-squares point (all parallel).
pub fn la_intersection_center(
    la_planes: &[ViewPlane; 3],
    sa_plane: &ViewPlane,
) -> Result<Vector3<f64>> {
    let e0 = sa_plane.axes[0];
    let e1 = sa_plane.axes[1];

    // Normal equations for min_p sum_i (m_i . (p - q_i))^2 in SA plane coords,
    // with m_i the in-plane normal of line i.
    let mut a = Matrix2::<f64>::zeros();
    let mut b = Vector2::<f64>::zeros();
    for la in la_planes {
        let line = plane_intersection(la, sa_plane)?;
        let dq = line.point - sa_plane.origin;
        let q = Vector2::new(dq.dot(&e0), dq.dot(&e1));
        let dir = Vector2::new(line.direction.dot(&e0), line.direction.dot(&e1));
        let norm = dir.norm();
        if norm < 1e-12 {
            // Cannot happen for a line lying in the SA plane, but guard anyway.
            return Err(Error::DegenerateGeometry(
                "intersection line degenerate in SA plane".into(),
            ));
        }
        let m = Vector2::new(-dir.y / norm, dir.x / norm);
        a += m * m.transpose();
        b += m * m.dot(&q);
    }

    let det = a.determinant();
    if det.abs() < 1e-9 {
        return Err(Error::DegenerateGeometry(
            "LA/SA intersection lines are parallel; center is not unique".into(),
        ));
    }
    let p = a.try_inverse().unwrap() * b;
    Ok(sa_plane.origin + e0 * p.x + e1 * p.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sa_at(z: f64) -> ViewPlane {
        ViewPlane::new(
            Vector3::new(0.0, 0.0, z),
            Vector3::x(),
            Vector3::y(),
            (1.8, 1.8),
            (128, 128),
        )
        .unwrap()
    }

    /// LA plane containing the line through `axis_point` along z, at the given
    /// azimuth about z.
    fn la_about_axis(axis_point: Vector3<f64>, azimuth: f64) -> ViewPlane {
        let d = Vector3::new(azimuth.cos(), azimuth.sin(), 0.0);
        ViewPlane::new(axis_point, Vector3::z(), d, (1.8, 1.8), (128, 128)).unwrap()
    }

    #[test]
    fn concurrent_lines_return_common_point() {
        let axis = Vector3::new(4.2, -7.7, 0.0);
        let la = [
            la_about_axis(axis, 0.0),
            la_about_axis(axis, 1.0),
            la_about_axis(axis, 2.1),
        ];
        let sa = sa_at(13.0);
        let c = la_intersection_center(&la, &sa).unwrap();
        assert_abs_diff_eq!(c.x, 4.2, epsilon = 1e-9);
        assert_abs_diff_eq!(c.y, -7.7, epsilon = 1e-9);
        assert_abs_diff_eq!(c.z, 13.0, epsilon = 1e-9);
    }

    #[test]
    fn la_parallel_to_sa_errors() {
        let la_ok = la_about_axis(Vector3::zeros(), 0.0);
        let la_parallel = ViewPlane::new(
            Vector3::new(0.0, 0.0, 40.0),
            Vector3::x(),
            Vector3::y(),
            (1.8, 1.8),
            (128, 128),
        )
        .unwrap();
        let la = [la_ok.clone(), la_ok, la_parallel];
        let err = la_intersection_center(&la, &sa_at(0.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry(_)));
    }

    /// Three non-concurrent lines forming a triangle: compare against a dense
    /// grid search minimizing the same objective on the SA plane.
    #[test]
    fn triangle_center_matches_grid_search() {
        // Slightly perturbed axis points so the three lines pairwise cross at
        // three distinct points.
        let la = [
            la_about_axis(Vector3::new(2.0, 0.0, 0.0), 0.3),
            la_about_axis(Vector3::new(-1.0, 1.5, 0.0), 1.4),
            la_about_axis(Vector3::new(0.5, -2.0, 0.0), 2.6),
        ];
        let sa = sa_at(5.0);
        let c = la_intersection_center(&la, &sa).unwrap();

        // Recover the three lines as (point, dir) pairs in SA plane coords.
        let mut lines2 = Vec::new();
        for p in &la {
            let line = plane_intersection(p, &sa).unwrap();
            let dq = line.point - sa.origin;
            let q = Vector2::new(dq.dot(&sa.axes[0]), dq.dot(&sa.axes[1]));
            let d = Vector2::new(line.direction.dot(&sa.axes[0]), line.direction.dot(&sa.axes[1]))
                .normalize();
            lines2.push((q, d));
        }
        let objective = |p: Vector2<f64>| -> f64 {
            lines2
                .iter()
                .map(|(q, d)| {
                    let m = Vector2::new(-d.y, d.x);
                    let r = m.dot(&(p - q));
                    r * r
                })
                .sum()
        };

        let mut best = (f64::INFINITY, Vector2::zeros());
        let step = 0.05;
        let mut gy = -10.0;
        while gy <= 10.0 {
            let mut gx = -10.0;
            while gx <= 10.0 {
                let p = Vector2::new(gx, gy);
                let v = objective(p);
                if v < best.0 {
                    best = (v, p);
                }
                gx += step;
            }
            gy += step;
        }

        let dq = c - sa.origin;
        let c2 = Vector2::new(dq.dot(&sa.axes[0]), dq.dot(&sa.axes[1]));
        // Grid resolution bounds how closely the brute-force argmin can agree.
        assert!(
            (c2 - best.1).norm() <= step * 1.5,
            "closed form {c2:?} vs grid search {:?}",
            best.1
        );
        // And the closed form should score at least as well as the grid point.
        assert!(objective(c2) <= best.0 + 1e-9);
    }

    /// Joint rigid motion of all planes moves the center by the same motion.
    #[test]
    fn center_is_rigid_equivariant() {
        use nalgebra::Rotation3;

        let la = [
            la_about_axis(Vector3::new(2.0, 0.0, 0.0), 0.3),
            la_about_axis(Vector3::new(-1.0, 1.5, 0.0), 1.4),
            la_about_axis(Vector3::new(0.5, -2.0, 0.0), 2.6),
        ];
        let sa = sa_at(5.0);
        let c = la_intersection_center(&la, &sa).unwrap();

        let rot = Rotation3::from_euler_angles(0.4, -0.2, 1.1);
        let t = Vector3::new(10.0, -3.0, 7.5);
        let map_plane = |p: &ViewPlane| {
            ViewPlane::new(
                rot * p.origin + t,
                rot * p.axes[0],
                rot * p.axes[1],
                p.pixel_spacing,
                p.size,
            )
            .unwrap()
        };
        let la_m = [map_plane(&la[0]), map_plane(&la[1]), map_plane(&la[2])];
        let c_m = la_intersection_center(&la_m, &map_plane(&sa)).unwrap();
        assert!((c_m - (rot * c + t)).norm() < 1e-6);
    }
}
