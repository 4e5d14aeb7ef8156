//! Central-difference gradient verification.

use crate::tensor::Tensor;

/// Default perturbation size. Central differences have O(eps^2) truncation
/// error, and f32 storage limits how small eps can usefully get.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Discrepancy scaled by the larger magnitude, floored so near-zero pairs
/// compare absolutely.
pub fn relative_gap(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` at `point`, one
/// element at a time, and returns the worst relative discrepancy.
pub fn finite_diff_check(
    mut f: impl FnMut(&Tensor) -> f64,
    point: &Tensor,
    analytic: &Tensor,
    eps: f64,
) -> f64 {
    assert_eq!(
        point.shape(),
        analytic.shape(),
        "gradient shape must match the point"
    );
    let indices: Vec<usize> = (0..point.len()).collect();
    finite_diff_check_at(&mut f, point, analytic, eps, &indices)
}

/// Same as [`finite_diff_check`] but restricted to the given element
/// indices. Large inputs get spot-checked this way; a full sweep over a
/// 64x64 image means thousands of forward passes.
pub fn finite_diff_check_at(
    f: &mut impl FnMut(&Tensor) -> f64,
    point: &Tensor,
    analytic: &Tensor,
    eps: f64,
    indices: &[usize],
) -> f64 {
    assert_eq!(point.shape(), analytic.shape());
    let mut probe = point.clone();
    let mut worst = 0.0f64;
    for &i in indices {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + eps as f32;
        let plus = f(&probe);
        probe.data_mut()[i] = original - eps as f32;
        let minus = f(&probe);
        probe.data_mut()[i] = original;
        // Use the perturbation that actually landed in f32; eps itself may
        // not be exactly representable around `original`.
        let step = (original + eps as f32) as f64 - (original - eps as f32) as f64;
        let numeric = (plus - minus) / step;
        let gap = relative_gap(analytic.data()[i] as f64, numeric);
        if gap > worst {
            worst = gap;
        }
    }
    worst
}

/// Deterministic spread of `count` distinct indices over `len` elements.
pub fn spread_indices(len: usize, count: usize) -> Vec<usize> {
    let count = count.min(len).max(1);
    (0..count).map(|i| i * len / count).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_passes() {
        // f(x) = sum x_i^2, grad = 2x
        let point = Tensor::new([3], vec![0.5, -1.25, 2.0]).unwrap();
        let analytic = Tensor::new([3], vec![1.0, -2.5, 4.0]).unwrap();
        let f = |t: &Tensor| t.data().iter().map(|&v| (v as f64).powi(2)).sum();
        let gap = finite_diff_check(f, &point, &analytic, DEFAULT_EPS);
        assert!(gap < 1e-4, "gap {gap}");
    }

    #[test]
    fn wrong_gradient_fails() {
        let point = Tensor::new([2], vec![1.0, 2.0]).unwrap();
        let wrong = Tensor::new([2], vec![2.0, 3.0]).unwrap();
        let f = |t: &Tensor| t.data().iter().map(|&v| (v as f64).powi(2)).sum();
        let gap = finite_diff_check(f, &point, &wrong, DEFAULT_EPS);
        assert!(gap > 0.2, "gap {gap}");
    }

    #[test]
    fn spread_indices_covers_ends() {
        let idx = spread_indices(100, 10);
        assert_eq!(idx.len(), 10);
        assert_eq!(idx[0], 0);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(*idx.last().unwrap() >= 90);
        assert_eq!(spread_indices(3, 10), vec![0, 1, 2]);
    }
}
