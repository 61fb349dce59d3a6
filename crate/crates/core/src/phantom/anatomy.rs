//! Truncated-ellipsoid left-ventricle anatomy and its parameter sampler.

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bearing_slice_count, MIN_BEARING_SLICES};
use crate::blocks::stream;
use crate::error::{Error, Result};

/// Rigid pose: rotate about the local origin, then translate. Euler angles
/// follow [`Rotation3::from_euler_angles`] (roll, pitch, yaw).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation_rad: [f64; 3],
    pub translation_mm: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation_rad: [0.0; 3],
            translation_mm: [0.0; 3],
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        let [r, p, y] = self.rotation_rad;
        Rotation3::from_euler_angles(r, p, y)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.translation_mm)
    }

    pub fn to_world(&self, p_local: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p_local + self.translation()
    }

    pub fn to_local(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().inverse() * (p_world - self.translation())
    }
}

/// Mean gray level per tissue class plus the additive noise level, all in
/// the image value range [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensity {
    pub myocardium: f64,
    pub blood_pool: f64,
    pub background: f64,
    pub noise_sigma: f64,
}

/// A truncated-ellipsoid myocardium shell.
///
/// In local coordinates the endocardium is the ellipsoid with semi-axes
/// `endo_radii = [rx, ry, rz]` centered at the origin, long axis along z
/// (apex toward -z). The epicardium is the endocardial cross-section offset
/// outward in-plane by the wall thickness, which varies linearly from
/// `wall_thickness[0]` at the apex to `wall_thickness[1]` at the basal cut.
/// A solid half-ball cap of radius `wall_thickness[0]` centered at
/// `(0, 0, -rz)` closes the apex; everything above the truncation plane
/// `z_cut` is removed, cutting off the `base_truncation` fraction of the
/// full long-axis extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnatomyParams {
    pub endo_radii: [f64; 3],
    /// (apex, base) wall thickness in mm.
    pub wall_thickness: [f64; 2],
    /// Fraction of the full long-axis extent removed at the base.
    pub base_truncation: f64,
    /// Remaining long-axis extent, apex cap bottom to basal cut, in mm.
    pub lv_length: f64,
    pub pose: Pose,
    pub intensity: Intensity,
}

impl AnatomyParams {
    /// Builds the anatomy, deriving `lv_length`, and validates invariants.
    pub fn new(
        endo_radii: [f64; 3],
        wall_thickness: [f64; 2],
        base_truncation: f64,
        pose: Pose,
        intensity: Intensity,
    ) -> Result<Self> {
        let full = 2.0 * endo_radii[2] + wall_thickness[0];
        let params = AnatomyParams {
            endo_radii,
            wall_thickness,
            base_truncation,
            lv_length: full * (1.0 - base_truncation),
            pose,
            intensity,
        };
        params.validate()?;
        Ok(params)
    }

    /// Full untruncated long-axis extent (cap bottom to ellipsoid top), mm.
    pub fn full_length(&self) -> f64 {
        2.0 * self.endo_radii[2] + self.wall_thickness[0]
    }

    /// Local z of the lowest anatomy point (bottom of the apical cap).
    pub fn apex_bottom_z(&self) -> f64 {
        -(self.endo_radii[2] + self.wall_thickness[0])
    }

    /// Local z of the basal truncation plane.
    pub fn z_cut(&self) -> f64 {
        self.endo_radii[2] - self.base_truncation * self.full_length()
    }

    /// Wall thickness at local height `z`, linear from apex to basal cut.
    pub fn wall_at(&self, z: f64) -> f64 {
        let rz = self.endo_radii[2];
        let [ta, tb] = self.wall_thickness;
        ta + (tb - ta) * (z + rz) / (self.z_cut() + rz)
    }

    /// Unit long-axis direction in world coordinates.
    pub fn long_axis_dir(&self) -> Vector3<f64> {
        self.pose.rotation() * Vector3::z()
    }

    /// World position of the local axis point `(0, 0, z)`.
    pub fn axis_point(&self, z: f64) -> Vector3<f64> {
        self.pose.to_world(&Vector3::new(0.0, 0.0, z))
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.endo_radii.as_slice(),
            self.wall_thickness.as_slice(),
            &[self.base_truncation, self.lv_length],
            &self.pose.rotation_rad,
            &self.pose.translation_mm,
            &[
                self.intensity.myocardium,
                self.intensity.blood_pool,
                self.intensity.background,
                self.intensity.noise_sigma,
            ],
        ];
        if fields.iter().any(|f| f.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput(
                "anatomy contains a non-finite value".into(),
            ));
        }

        let [rx, ry, rz] = self.endo_radii;
        let [ta, tb] = self.wall_thickness;
        let derived_length = self.full_length() * (1.0 - self.base_truncation);
        let checks: [(bool, &str); 8] = [
            (
                rx > 0.0 && ry > 0.0 && rz > 0.0,
                "endo radii must be positive",
            ),
            (
                ta > 1.0 && tb > 1.0,
                "wall thickness must exceed 1 mm everywhere",
            ),
            (
                (0.05..=0.2).contains(&self.base_truncation),
                "base truncation must lie in [0.05, 0.2]",
            ),
            (
                (self.lv_length - derived_length).abs() < 1e-9,
                "lv_length inconsistent with radii/wall/truncation",
            ),
            (
                self.z_cut() > -rz + 1.0,
                "base truncation removes the entire ring zone",
            ),
            (
                bearing_slice_count(self.lv_length) >= MIN_BEARING_SLICES,
                "anatomy too short for 6 myocardium-bearing SA slices at 10 mm spacing",
            ),
            (
                [
                    self.intensity.myocardium,
                    self.intensity.blood_pool,
                    self.intensity.background,
                ]
                .iter()
                .all(|m| (0.0..=1.0).contains(m)),
                "tissue mean intensities must lie in [0, 1]",
            ),
            (
                (0.0..=1.0).contains(&self.intensity.noise_sigma),
                "noise sigma must lie in [0, 1]",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidInput(format!("anatomy: {msg}")));
            }
        }
        Ok(())
    }
}

/// Inclusive sampling intervals for [`sample_anatomy`]. Two-element arrays
/// are `[lo, hi]`; rotation and translation are symmetric bounds about zero
/// applied per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnatomyRanges {
    pub endo_rx_mm: [f64; 2],
    pub endo_ry_mm: [f64; 2],
    pub endo_rz_mm: [f64; 2],
    pub wall_apex_mm: [f64; 2],
    pub wall_base_mm: [f64; 2],
    pub base_truncation: [f64; 2],
    pub rotation_rad: f64,
    pub translation_mm: f64,
    pub myocardium: [f64; 2],
    pub blood_pool: [f64; 2],
    pub background: [f64; 2],
    pub noise_sigma: [f64; 2],
}

impl Default for AnatomyRanges {
    fn default() -> Self {
        AnatomyRanges {
            endo_rx_mm: [16.0, 24.0],
            endo_ry_mm: [16.0, 24.0],
            endo_rz_mm: [43.0, 52.0],
            wall_apex_mm: [5.0, 9.0],
            wall_base_mm: [7.0, 12.0],
            base_truncation: [0.05, 0.2],
            rotation_rad: 0.35,
            translation_mm: 8.0,
            myocardium: [0.55, 0.70],
            blood_pool: [0.80, 0.95],
            background: [0.10, 0.25],
            noise_sigma: [0.02, 0.05],
        }
    }
}

impl AnatomyRanges {
    /// Checks interval sanity and that anatomies drawn anywhere inside the
    /// box satisfy the [`AnatomyParams`] invariants. Every geometric
    /// invariant is monotone per coordinate, so probing the two interval
    /// ends plus the shortest-ventricle corner covers the whole box.
    pub fn validate(&self) -> Result<()> {
        let intervals = [
            ("endo_rx_mm", self.endo_rx_mm),
            ("endo_ry_mm", self.endo_ry_mm),
            ("endo_rz_mm", self.endo_rz_mm),
            ("wall_apex_mm", self.wall_apex_mm),
            ("wall_base_mm", self.wall_base_mm),
            ("base_truncation", self.base_truncation),
            ("myocardium", self.myocardium),
            ("blood_pool", self.blood_pool),
            ("background", self.background),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, [lo, hi]) in intervals {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!(
                    "anatomy range {name}: [{lo}, {hi}] is not a nonempty finite interval"
                )));
            }
        }
        if !(self.rotation_rad.is_finite() && (0.0..=std::f64::consts::PI).contains(&self.rotation_rad)) {
            return Err(Error::Config(
                "anatomy range rotation_rad must lie in [0, pi]".into(),
            ));
        }
        if !(self.translation_mm.is_finite() && self.translation_mm >= 0.0) {
            return Err(Error::Config(
                "anatomy range translation_mm must be nonnegative".into(),
            ));
        }

        let corners = [
            ("lower end", 0, 0),
            ("upper end", 1, 1),
            // lv_length grows with rz and apical wall, shrinks with truncation
            ("shortest-ventricle corner", 0, 1),
        ];
        for (name, lo_hi, trunc) in corners {
            let pick = |iv: [f64; 2]| iv[lo_hi];
            AnatomyParams::new(
                [
                    pick(self.endo_rx_mm),
                    pick(self.endo_ry_mm),
                    pick(self.endo_rz_mm),
                ],
                [pick(self.wall_apex_mm), pick(self.wall_base_mm)],
                self.base_truncation[trunc],
                Pose::identity(),
                Intensity {
                    myocardium: pick(self.myocardium),
                    blood_pool: pick(self.blood_pool),
                    background: pick(self.background),
                    noise_sigma: pick(self.noise_sigma),
                },
            )
            .map_err(|e| Error::Config(format!("anatomy ranges invalid at {name}: {e}")))?;
        }
        Ok(())
    }
}

/// Draws one anatomy uniformly from `ranges`, deterministically in `seed`.
pub fn sample_anatomy(seed: u64, ranges: &AnatomyRanges) -> Result<AnatomyParams> {
    ranges.validate()?;
    let mut rng = stream(seed, "anatomy");
    let mut draw = |iv: [f64; 2]| rng.random_range(iv[0]..=iv[1]);

    let endo_radii = [
        draw(ranges.endo_rx_mm),
        draw(ranges.endo_ry_mm),
        draw(ranges.endo_rz_mm),
    ];
    let wall_thickness = [draw(ranges.wall_apex_mm), draw(ranges.wall_base_mm)];
    let base_truncation = draw(ranges.base_truncation);
    let sym = |b: f64| [-b, b];
    let pose = Pose {
        rotation_rad: [
            draw(sym(ranges.rotation_rad)),
            draw(sym(ranges.rotation_rad)),
            draw(sym(ranges.rotation_rad)),
        ],
        translation_mm: [
            draw(sym(ranges.translation_mm)),
            draw(sym(ranges.translation_mm)),
            draw(sym(ranges.translation_mm)),
        ],
    };
    let intensity = Intensity {
        myocardium: draw(ranges.myocardium),
        blood_pool: draw(ranges.blood_pool),
        background: draw(ranges.background),
        noise_sigma: draw(ranges.noise_sigma),
    };
    AnatomyParams::new(endo_radii, wall_thickness, base_truncation, pose, intensity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_ranges_validate() {
        AnatomyRanges::default().validate().unwrap();
    }

    #[test]
    fn sampled_anatomy_is_valid_and_deterministic() {
        let ranges = AnatomyRanges::default();
        let a = sample_anatomy(0, &ranges).unwrap();
        a.validate().unwrap();
        let b = sample_anatomy(0, &ranges).unwrap();
        assert_eq!(a, b);
        let c = sample_anatomy(1, &ranges).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn samples_stay_inside_ranges() {
        let ranges = AnatomyRanges::default();
        for seed in 0..50 {
            let a = sample_anatomy(seed, &ranges).unwrap();
            assert!((16.0..=24.0).contains(&a.endo_radii[0]));
            assert!((43.0..=52.0).contains(&a.endo_radii[2]));
            assert!((5.0..=9.0).contains(&a.wall_thickness[0]));
            assert!((0.05..=0.2).contains(&a.base_truncation));
            assert!(a.pose.rotation_rad.iter().all(|r| r.abs() <= 0.35));
            assert!(a.pose.translation_mm.iter().all(|t| t.abs() <= 8.0));
            assert!((0.8..=0.95).contains(&a.intensity.blood_pool));
        }
    }

    #[test]
    fn thin_wall_range_is_rejected() {
        let ranges = AnatomyRanges {
            wall_apex_mm: [0.5, 9.0],
            ..Default::default()
        };
        let err = ranges.validate().unwrap_err();
        assert!(err.to_string().contains("wall thickness"));
    }

    #[test]
    fn short_ventricle_range_is_rejected() {
        // 2*30 + 5 = 65 mm at 20% truncation leaves 52 mm: too short.
        let ranges = AnatomyRanges {
            endo_rz_mm: [30.0, 52.0],
            ..Default::default()
        };
        let err = ranges.validate().unwrap_err();
        assert!(err.to_string().contains("shortest-ventricle corner"), "{err}");
    }

    #[test]
    fn empty_interval_is_rejected() {
        let ranges = AnatomyRanges {
            blood_pool: [0.9, 0.8],
            ..Default::default()
        };
        assert!(ranges.validate().is_err());
    }

    #[test]
    fn derived_lengths_are_consistent() {
        let a = sample_anatomy(3, &AnatomyRanges::default()).unwrap();
        assert_abs_diff_eq!(
            a.z_cut() - a.apex_bottom_z(),
            a.lv_length,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(a.wall_at(-a.endo_radii[2]), a.wall_thickness[0]);
        assert_abs_diff_eq!(a.wall_at(a.z_cut()), a.wall_thickness[1]);
    }

    #[test]
    fn pose_round_trips() {
        let pose = Pose {
            rotation_rad: [0.2, -0.3, 0.1],
            translation_mm: [5.0, -2.0, 7.0],
        };
        let p = Vector3::new(3.0, -4.0, 9.0);
        let back = pose.to_local(&pose.to_world(&p));
        assert!((back - p).norm() < 1e-12);
    }

    #[test]
    fn tampered_lv_length_is_rejected() {
        let mut a = sample_anatomy(0, &AnatomyRanges::default()).unwrap();
        a.lv_length += 1.0;
        assert!(a.validate().is_err());
    }
}
