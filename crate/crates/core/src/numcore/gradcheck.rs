use super::head::{HeadGrad, LinearHead, Matrix};
use super::loss::LossSpec;

/// Denominator floor for [`relative_error`]; below it the comparison is
/// effectively absolute, so vanishing gradient entries do not blow up.
const REL_FLOOR: f64 = 1e-6;

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`.
pub fn finite_diff_grad<F>(f: F, point: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + eps;
            let plus = f(&x);
            x[i] = point[i] - eps;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between the analytic gradient of `spec` and
/// central differences, over every weight and bias of `head`.
///
/// `eps` should lie in `[1e-7, 1e-3]`.
pub fn grad_check(spec: &LossSpec, head: &LinearHead, inputs: &Matrix, eps: f64) -> f64 {
    debug_assert!((1e-7..=1e-3).contains(&eps));
    let mut grad = HeadGrad::zeros_like(head);
    spec.batch(head, inputs, 0..spec.examples.len(), 1.0, Some(&mut grad));
    let analytic = grad.flat();

    let mut probe = head.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = head.param(i);
        *probe.param_mut(i) = orig + eps;
        let plus = spec.value(&probe, inputs);
        *probe.param_mut(i) = orig - eps;
        let minus = spec.value(&probe, inputs);
        *probe.param_mut(i) = orig;
        worst = worst.max(relative_error(a, (plus - minus) / (2.0 * eps)));
    }
    worst
}
