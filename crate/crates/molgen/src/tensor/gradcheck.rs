//! Finite-difference gradient checking.
//!
//! The checker is deliberately ignorant of the tape: it only calls a
//! black-box scalar function twice per input element (central differences),
//! so it stays an independent oracle for the analytic gradients.

/// Central-difference gradient of `f` at `x` with half-step `h`:
/// `(f(x + h e_i) - f(x - h e_i)) / (2 h)` per element.
pub fn central_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Worst-case relative error between analytic and numeric gradients:
/// `max_i |a_i - n_i| / max(1, |a_i|, |n_i|)`.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "gradient length mismatch: {} vs {}",
        analytic.len(),
        numeric.len()
    );
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}
