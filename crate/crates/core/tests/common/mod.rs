#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use rand::Rng;

/// Adjusted Rand index by explicit pair counting.
pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let (mut both, mut in_a, mut in_b) = (0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            both += u64::from(sa && sb);
            in_a += u64::from(sa);
            in_b += u64::from(sb);
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let expected = in_a as f64 * in_b as f64 / pairs;
    let max = 0.5 * (in_a + in_b) as f64;
    if max == expected {
        return 1.0;
    }
    (both as f64 - expected) / (max - expected)
}

/// Relative error used by gradient checks; absolute below `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

pub fn row_sums_are_one(m: ArrayView2<f64>, tol: f64) -> bool {
    m.outer_iter().all(|r| (r.sum() - 1.0).abs() <= tol)
}
