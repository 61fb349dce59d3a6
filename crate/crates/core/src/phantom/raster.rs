//! Rasterizing an anatomy onto view planes.

use nalgebra::Vector3;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::anatomy::AnatomyParams;
use crate::blocks::stream;
use crate::error::Result;
use crate::geometry::ViewPlane;

/// Tissue class at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tissue {
    Background,
    BloodPool,
    Myocardium,
}

impl AnatomyParams {
    /// Tissue class at a local-coordinate point.
    pub fn tissue_local(&self, p: &Vector3<f64>) -> Tissue {
        let [rx, ry, rz] = self.endo_radii;
        if p.z > self.z_cut() {
            return Tissue::Background;
        }
        if p.z < -rz {
            // solid apical cap
            let d = p - Vector3::new(0.0, 0.0, -rz);
            let ta = self.wall_thickness[0];
            return if d.norm_squared() <= ta * ta {
                Tissue::Myocardium
            } else {
                Tissue::Background
            };
        }
        // ring zone: endo ellipse and its outward in-plane offset by wall_at(z)
        let s = (1.0 - (p.z / rz) * (p.z / rz)).max(0.0).sqrt();
        let (ex, ey) = (rx * s, ry * s);
        let t = self.wall_at(p.z);
        let inside = |ax: f64, ay: f64| {
            if ax <= 0.0 || ay <= 0.0 {
                return p.x == 0.0 && p.y == 0.0;
            }
            let (u, v) = (p.x / ax, p.y / ay);
            u * u + v * v <= 1.0
        };
        if inside(ex, ey) {
            Tissue::BloodPool
        } else if inside(ex + t, ey + t) {
            Tissue::Myocardium
        } else {
            Tissue::Background
        }
    }

    /// Tissue class at a world-coordinate point.
    pub fn tissue_world(&self, p: &Vector3<f64>) -> Tissue {
        self.tissue_local(&self.pose.to_local(p))
    }

    /// Closed-form myocardium cross-section area (mm^2) on the local plane
    /// z = `z`, perpendicular to the long axis.
    pub fn sa_section_area_mm2(&self, z: f64) -> f64 {
        let [rx, ry, rz] = self.endo_radii;
        let ta = self.wall_thickness[0];
        if z > self.z_cut() || z < self.apex_bottom_z() {
            return 0.0;
        }
        if z < -rz {
            // cap disk
            let h = z + rz;
            return std::f64::consts::PI * (ta * ta - h * h);
        }
        // elliptical annulus: pi (ex+t)(ey+t) - pi ex ey = pi t (ex + ey + t)
        let s = (1.0 - (z / rz) * (z / rz)).max(0.0).sqrt();
        let t = self.wall_at(z);
        std::f64::consts::PI * t * (rx * s + ry * s + t)
    }
}

/// Renders the anatomy onto `plane`: the mask marks pixel centers inside the
/// myocardium shell; the image is the per-tissue mean intensity plus white
/// Gaussian noise of the anatomy's sigma, clipped to [0, 1]. A plane missing
/// the anatomy entirely yields an all-zero mask and a background-only image.
pub fn rasterize_view(
    anatomy: &AnatomyParams,
    plane: &ViewPlane,
    noise_seed: u64,
) -> Result<(Array2<f32>, Array2<u8>)> {
    anatomy.validate()?;
    plane.validate()?;
    let (h, w) = plane.size;
    let mut image = Array2::<f32>::zeros((h, w));
    let mut mask = Array2::<u8>::zeros((h, w));
    let mut rng = stream(noise_seed, "raster.noise");
    let sigma = anatomy.intensity.noise_sigma;
    for i in 0..h {
        for j in 0..w {
            let p = plane.pixel_to_world(i as f64, j as f64);
            let tissue = anatomy.tissue_world(&p);
            let mean = match tissue {
                Tissue::Background => anatomy.intensity.background,
                Tissue::BloodPool => anatomy.intensity.blood_pool,
                Tissue::Myocardium => anatomy.intensity.myocardium,
            };
            mask[(i, j)] = (tissue == Tissue::Myocardium) as u8;
            let noise: f64 = rng.sample(StandardNormal);
            image[(i, j)] = (mean + sigma * noise).clamp(0.0, 1.0) as f32;
        }
    }
    Ok((image, mask))
}
