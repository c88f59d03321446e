/// Result of comparing analytic gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Coordinate with the largest relative error, if any were checked.
    pub worst_index: Option<usize>,
    pub checked: usize,
}

/// Magnitudes below this are treated as this value in the relative error
/// denominator, so two vanishing gradients compare as equal.
pub const REL_ERR_FLOOR: f64 = 1e-7;

/// Compares `analytic` against `(f(p + eps e_i) - f(p - eps e_i)) / 2 eps`
/// for every coordinate. Never fails; the caller decides what error is
/// acceptable.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], analytic: &[f64], eps: f64) -> FdReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(eps > 0.0, "eps must be positive");
    assert_eq!(params.len(), analytic.len(), "parameter/gradient length mismatch");
    let mut p = params.to_vec();
    let mut report = FdReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: None,
        checked: 0,
    };
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = f(&p);
        p[i] = orig - eps;
        let down = f(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let abs = (numeric - analytic[i]).abs();
        let rel = abs / numeric.abs().max(analytic[i].abs()).max(REL_ERR_FLOOR);
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err || report.worst_index.is_none() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst_index = Some(i);
        }
        report.checked += 1;
    }
    report
}
