//! Dice and physical-spacing Hausdorff distance, plus stratified evaluation.
//!
//! Masks are binary (nonzero = foreground). Distances are measured between
//! foreground pixel centers and scaled to millimetres, so the largest
//! possible value is the corner-to-corner diagonal.

mod eval;
mod report;

pub use eval::{aggregate, argmax_masks, evaluate, predict_masks, score_stack, EvalOptions, SliceScore};
pub use report::{EvalReport, MetricStats, RegionMetrics};

use ndarray::ArrayView2;

use crate::{Error, Result};

fn check_shapes(a: &ArrayView2<u8>, b: &ArrayView2<u8>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?} mask", a.dim()),
            actual: format!("{:?}", b.dim()),
        });
    }
    Ok(())
}

fn check_spacing(spacing: [f64; 2]) -> Result<()> {
    if spacing.iter().any(|&s| !s.is_finite() || s <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "pixel spacing must be positive, got {spacing:?}"
        )));
    }
    Ok(())
}

/// Dice overlap `2|a∩b| / (|a|+|b|)`; two empty masks count as identical (1.0).
pub fn dice(a: ArrayView2<u8>, b: ArrayView2<u8>) -> Result<f64> {
    check_shapes(&a, &b)?;
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let (fx, fy) = (x != 0, y != 0);
        na += fx as usize;
        nb += fy as usize;
        inter += (fx && fy) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Corner-to-corner distance between pixel centers, in millimetres.
pub fn diagonal_mm(shape: (usize, usize), spacing: [f64; 2]) -> f64 {
    let (h, w) = shape;
    ((h.saturating_sub(1) as f64 * spacing[0]).powi(2)
        + (w.saturating_sub(1) as f64 * spacing[1]).powi(2))
    .sqrt()
}

fn foreground_mm(mask: &ArrayView2<u8>, spacing: [f64; 2]) -> Vec<(f64, f64)> {
    mask.indexed_iter()
        .filter(|(_, &v)| v != 0)
        .map(|((r, c), _)| (r as f64 * spacing[0], c as f64 * spacing[1]))
        .collect()
}

/// Largest of the per-point nearest-neighbour distances, squared. The inner
/// scan stops as soon as a neighbour closer than the running maximum shows
/// up, which cannot change the result.
fn directed_sq(from: &[(f64, f64)], to: &[(f64, f64)]) -> f64 {
    let mut worst = 0.0f64;
    for p in from {
        let mut best = f64::INFINITY;
        for q in to {
            let d = (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
            if d < best {
                best = d;
                if best <= worst {
                    break;
                }
            }
        }
        worst = worst.max(best);
    }
    worst
}

/// Symmetric Hausdorff distance in millimetres over foreground pixel
/// centers. Two empty masks give 0.0; exactly one empty mask is penalized
/// with the image diagonal.
pub fn hausdorff(a: ArrayView2<u8>, b: ArrayView2<u8>, spacing: [f64; 2]) -> Result<f64> {
    check_shapes(&a, &b)?;
    check_spacing(spacing)?;
    let pa = foreground_mm(&a, spacing);
    let pb = foreground_mm(&b, spacing);
    match (pa.is_empty(), pb.is_empty()) {
        (true, true) => Ok(0.0),
        (true, false) | (false, true) => Ok(diagonal_mm(a.dim(), spacing)),
        (false, false) => Ok(directed_sq(&pa, &pb).max(directed_sq(&pb, &pa)).sqrt()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SP: [f64; 2] = [1.8, 1.8];

    fn random_mask(rng: &mut ChaCha8Rng, side: usize, fill: f64) -> Array2<u8> {
        Array2::from_shape_simple_fn((side, side), || (rng.random_range(0.0..1.0) < fill) as u8)
    }

    /// All-pairs reference without the early-out.
    fn hd_oracle(a: &Array2<u8>, b: &Array2<u8>, spacing: [f64; 2]) -> f64 {
        let pts = |m: &Array2<u8>| foreground_mm(&m.view(), spacing);
        let (pa, pb) = (pts(a), pts(b));
        if pa.is_empty() && pb.is_empty() {
            return 0.0;
        }
        if pa.is_empty() || pb.is_empty() {
            return diagonal_mm(a.dim(), spacing);
        }
        let dir = |from: &[(f64, f64)], to: &[(f64, f64)]| {
            from.iter()
                .map(|p| {
                    to.iter()
                        .map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        dir(&pa, &pb).max(dir(&pb, &pa))
    }

    #[test]
    fn dice_hand_values() {
        let mut a = Array2::<u8>::zeros((6, 6));
        a.slice_mut(ndarray::s![0..2, 0..2]).fill(1);
        assert_eq!(dice(a.view(), a.view()).unwrap(), 1.0);

        let mut shifted = Array2::<u8>::zeros((6, 6));
        shifted.slice_mut(ndarray::s![0..2, 1..3]).fill(1);
        assert_eq!(dice(a.view(), shifted.view()).unwrap(), 0.5);

        let mut disjoint = Array2::<u8>::zeros((6, 6));
        disjoint[[5, 5]] = 1;
        assert_eq!(dice(a.view(), disjoint.view()).unwrap(), 0.0);

        let empty = Array2::<u8>::zeros((6, 6));
        assert_eq!(dice(empty.view(), empty.view()).unwrap(), 1.0);
        assert_eq!(dice(a.view(), empty.view()).unwrap(), 0.0);
        assert!(dice(a.view(), Array2::<u8>::zeros((5, 6)).view()).is_err());
    }

    #[test]
    fn hausdorff_hand_values() {
        let mut a = Array2::<u8>::zeros((8, 8));
        let mut b = Array2::<u8>::zeros((8, 8));
        a[[0, 0]] = 1;
        b[[0, 5]] = 1;
        assert_abs_diff_eq!(
            hausdorff(a.view(), b.view(), SP).unwrap(),
            9.0,
            epsilon = 1e-12
        );
        assert_eq!(hausdorff(a.view(), a.view(), SP).unwrap(), 0.0);

        let empty = Array2::<u8>::zeros((8, 8));
        assert_eq!(hausdorff(empty.view(), empty.view(), SP).unwrap(), 0.0);
        assert_abs_diff_eq!(
            hausdorff(a.view(), empty.view(), SP).unwrap(),
            diagonal_mm((8, 8), SP),
            epsilon = 1e-12
        );
        assert!(hausdorff(a.view(), b.view(), [0.0, 1.8]).is_err());
    }

    #[test]
    fn matches_all_pairs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..60 {
            let fill = [0.0, 0.02, 0.1, 0.4][trial % 4];
            let a = random_mask(&mut rng, 12, fill);
            let b = random_mask(&mut rng, 12, 0.15);
            let got = hausdorff(a.view(), b.view(), SP).unwrap();
            let want = hd_oracle(&a, &b, SP);
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetry_scaling_and_diagonal_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let a = random_mask(&mut rng, 16, 0.1);
            let b = random_mask(&mut rng, 16, 0.1);
            let ab = hausdorff(a.view(), b.view(), SP).unwrap();
            let ba = hausdorff(b.view(), a.view(), SP).unwrap();
            assert_eq!(ab, ba);
            assert_eq!(
                dice(a.view(), b.view()).unwrap(),
                dice(b.view(), a.view()).unwrap()
            );
            assert!(ab <= diagonal_mm((16, 16), SP) + 1e-12);
            let scaled = hausdorff(a.view(), b.view(), [3.6, 3.6]).unwrap();
            assert_abs_diff_eq!(scaled, 2.0 * ab, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_iff_equal_for_nonempty_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..40 {
            let a = random_mask(&mut rng, 10, 0.2);
            if a.iter().all(|&v| v == 0) {
                continue;
            }
            assert_eq!(hausdorff(a.view(), a.view(), SP).unwrap(), 0.0);
            let mut b = a.clone();
            let (r, c) = (rng.random_range(0..10), rng.random_range(0..10));
            b[[r, c]] ^= 1;
            if b.iter().any(|&v| v != 0) {
                assert!(hausdorff(a.view(), b.view(), SP).unwrap() > 0.0);
            }
        }
    }
}
