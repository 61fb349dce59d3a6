//! Plane algebra: view-plane bookkeeping, LA-intersection ROI centering,
//! cross-view label consistency and apex/mid/base slice stratification.
//!
//! Everything here is pure and uses millimeter world coordinates; image
//! arrays are indexed `(row, col)`.

mod center;
mod consistency;
mod plane;
mod roi;
mod stratify;

pub use center::la_intersection_center;
pub use consistency::{consistency_check, Consistency};
pub use plane::{plane_intersection, IntersectionLine, ViewPlane};
pub use roi::crop_to_roi;
pub use stratify::{stratify_slices, SliceRegion};
