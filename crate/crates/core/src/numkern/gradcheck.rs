//! Central finite-difference gradient checking.
//!
//! The per-coordinate relative error is `|a - n| / max(|a|, |n|, floor)` with
//! `floor = 1e-3 · max(‖a‖∞, ‖n‖∞)`: coordinates whose gradient is negligible
//! next to the largest one are judged on the scale of the whole gradient
//! instead of amplifying finite-difference round-off.

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn central_difference<F>(f: &mut F, params: &[f64], i: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = params.to_vec();
    x[i] = params[i] + h;
    let fp = f(&x);
    x[i] = params[i] - h;
    let fm = f(&x);
    (fp - fm) / (2.0 * h)
}

/// Compare `analytic` against central differences of `f` at `params` on all
/// coordinates.
pub fn grad_check<F>(f: F, params: &[f64], analytic: &[f64], h: f64, tolerance: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize> = (0..params.len()).collect();
    grad_check_indices(f, params, analytic, &all, h, tolerance)
}

/// As [`grad_check`] but only on the listed coordinates; used for networks
/// too large to difference exhaustively.
pub fn grad_check_indices<F>(mut f: F, params: &[f64], analytic: &[f64], indices: &[usize], h: f64, tolerance: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "analytic gradient length");
    let numeric: Vec<f64> = indices
        .iter()
        .map(|&i| central_difference(&mut f, params, i, h))
        .collect();
    let scale = indices
        .iter()
        .map(|&i| analytic[i].abs())
        .chain(numeric.iter().map(|n| n.abs()))
        .fold(0.0f64, f64::max);
    let floor = (1e-3 * scale).max(1e-12);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: indices.first().copied().unwrap_or(0),
        analytic: 0.0,
        numeric: 0.0,
        checked: indices.len(),
        tolerance,
        passed: true,
    };
    for (&i, &n) in indices.iter().zip(&numeric) {
        let a = analytic[i];
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = n;
        }
    }
    report.passed = report.max_rel_error < tolerance;
    report
}
