/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub numerical: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

/// Denominator floor, so coordinates where both gradients vanish are judged
/// on absolute error instead of amplifying round-off.
const REL_FLOOR: f64 = 1e-6;

pub fn numerical_gradient<F: FnMut(&[f64]) -> f64>(
    mut loss: F,
    params: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = loss(&p);
            p[i] = orig - step;
            let down = loss(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Central finite differences of `loss` against `analytic`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-6)`; the check
/// passes iff the maximum stays below `tolerance`.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(
    loss: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len(), "analytic gradient length");
    let numerical = numerical_gradient(loss, params, step);
    let relative_errors: Vec<f64> = analytic
        .iter()
        .zip(&numerical)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .collect();
    let (worst_index, max_relative_error) = relative_errors
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    GradCheckReport {
        numerical,
        relative_errors,
        max_relative_error,
        worst_index,
        passed: max_relative_error < tolerance,
    }
}
