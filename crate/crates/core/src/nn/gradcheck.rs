//! Central finite-difference gradient checking.
//!
//! The numeric gradient is computed by perturbing one flat parameter at a
//! time, so it is independent of the reverse-mode path it verifies.

use super::NetParams;

/// Central-difference gradient of `loss` w.r.t. every parameter.
pub fn finite_difference_grad<F>(params: &NetParams, mut loss: F, eps: f64) -> Vec<f64>
where
    F: FnMut(&NetParams) -> f64,
{
    let mut probe = params.clone();
    let mut grad = vec![0.0; params.values.len()];
    for i in 0..params.values.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + eps;
        let above = loss(&probe);
        probe.values[i] = orig - eps;
        let below = loss(&probe);
        probe.values[i] = orig;
        grad[i] = (above - below) / (2.0 * eps);
    }
    grad
}

/// Largest relative discrepancy between two gradient vectors. The
/// denominator is floored at 1e-6 so near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
