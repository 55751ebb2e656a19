//! Central finite differences, the independent oracle for every gradient.

use super::Tensor;

/// Numerical gradient of `loss_fn` with respect to `param`, by central
/// differences with step `h`. `loss_fn` must recompute the loss from
/// scratch on each call; the parameter is restored exactly afterwards.
pub fn finite_difference_grad(param: &Tensor, mut loss_fn: impl FnMut() -> f64, h: f64) -> Vec<f64> {
    let n = param.numel();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let original = param.data()[i];
        param.data_mut()[i] = original + h;
        let plus = loss_fn();
        param.data_mut()[i] = original - h;
        let minus = loss_fn();
        param.data_mut()[i] = original;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Worst-case relative error between two gradient vectors. The denominator
/// is floored at 1e-3 so components that are numerically zero compare by
/// absolute error instead of exploding.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}
