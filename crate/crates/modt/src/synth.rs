//! Deterministic synthetic datasets used by the examples, tests, and docs.
//!
//! Both generators produce planar two-class problems whose structure a
//! gated mixture can represent exactly but a single shallow tree cannot:
//! the gate boundary is linear (vertical bands or a diagonal), and the
//! class pattern inside each region is axis-aligned.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;

/// Three vertical bands over `u` in [-3, 3], each with its own horizontal
/// stump pattern in `v`; the rightmost band's pattern is inverted so no
/// single stump fits all bands. Gaps of 0.12 keep the regions crisp.
pub fn three_bands(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    while y.len() < n {
        let u: f64 = rng.random_range(-3.0..3.0);
        if (u + 1.0).abs() < 0.12 || (u - 1.0).abs() < 0.12 {
            continue;
        }
        let v: f64 = rng.random_range(-3.0..3.0);
        let (threshold, inverted) = if u < -1.0 {
            (1.0, false)
        } else if u < 1.0 {
            (-1.0, false)
        } else {
            (0.0, true)
        };
        if (v - threshold).abs() < 0.12 {
            continue;
        }
        let above = v > threshold;
        let label = usize::from(above != inverted);
        rows.push(u);
        rows.push(v);
        y.push(label);
    }
    let x = Array2::from_shape_vec((n, 2), rows).expect("shape");
    Dataset::from_parts(
        x,
        y,
        vec!["low".into(), "high".into()],
        vec!["u".into(), "v".into()],
    )
    .expect("valid dataset")
}

/// Two regions split by the 45-degree line `u + v = 0` on [-1, 1]^2. Inside
/// the upper region the label is the quadrant pattern `(u > 0) xor (v > 0)`;
/// the lower region carries the complementary pattern. Each region is a
/// depth-2 tree problem, but globally the diagonal makes every shallow
/// axis-aligned tree miss a sizable fraction of the points.
pub fn diagonal_regions(n: usize, seed: u64) -> Dataset {
    const DIAG_MARGIN: f64 = 0.06;
    const AXIS_MARGIN: f64 = 0.06;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    while y.len() < n {
        let u: f64 = rng.random_range(-1.0..1.0);
        let v: f64 = rng.random_range(-1.0..1.0);
        if (u + v).abs() < DIAG_MARGIN || u.abs() < AXIS_MARGIN || v.abs() < AXIS_MARGIN {
            continue;
        }
        let pattern = usize::from((u > 0.0) != (v > 0.0));
        let label = if u + v > 0.0 { pattern } else { 1 - pattern };
        rows.push(u);
        rows.push(v);
        y.push(label);
    }
    let x = Array2::from_shape_vec((n, 2), rows).expect("shape");
    Dataset::from_parts(
        x,
        y,
        vec!["neg".into(), "pos".into()],
        vec!["u".into(), "v".into()],
    )
    .expect("valid dataset")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        let a = three_bands(50, 7);
        let b = three_bands(50, 7);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        let c = diagonal_regions(50, 7);
        let d = diagonal_regions(50, 7);
        assert_eq!(c.x, d.x);
        assert_eq!(c.y, d.y);
    }

    #[test]
    fn both_classes_present() {
        for ds in [three_bands(200, 1), diagonal_regions(200, 1)] {
            assert_eq!(ds.n_samples(), 200);
            assert_eq!(ds.n_classes(), 2);
            assert!(ds.y.contains(&0));
            assert!(ds.y.contains(&1));
        }
    }
}
