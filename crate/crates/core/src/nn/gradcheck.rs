use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|)`
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: usize,
}

/// Compares `analytic` against central differences of `f` at `params`.
pub fn grad_check<F>(f: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Input(format!("eps must be positive, got {eps}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} analytic derivatives",
            params.len(),
            analytic.len()
        )));
    }
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: 0,
    };
    let mut p = params.to_vec();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let plus = f(&p);
        p[i] = orig - eps;
        let minus = f(&p);
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective not finite when perturbing parameter {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(1.0);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
        report.max_abs_err = report.max_abs_err.max(abs);
    }
    Ok(report)
}
