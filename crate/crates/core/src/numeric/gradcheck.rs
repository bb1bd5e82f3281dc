//! Central finite differences for checking analytic gradients.

use super::{Gradients, ParamStore};

/// `(f(x + h) - f(x - h)) / 2h` for one coordinate of one parameter.
pub fn central_difference<F>(params: &mut ParamStore, id: super::ParamId, index: usize, h: f64, f: &mut F) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let x = params.get(id).data()[index];
    params.get_mut(id).data_mut()[index] = x + h;
    let plus = f(params);
    params.get_mut(id).data_mut()[index] = x - h;
    let minus = f(params);
    params.get_mut(id).data_mut()[index] = x;
    (plus - minus) / (2.0 * h)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub passed: usize,
    /// Largest relative error seen, with the parameter name and index.
    pub worst: Option<(String, usize, f64)>,
}

impl GradCheckReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.passed += other.passed;
        if let Some(w) = other.worst {
            if self.worst.as_ref().is_none_or(|cur| w.2 > cur.2) {
                self.worst = Some(w);
            }
        }
    }
}

/// Compares every coordinate of `analytic` with central differences of
/// `f`. A coordinate passes when `|a - n| <= rel_tol * max(|a|, |n|)`, or
/// when both are below `abs_floor` (untouched parameters have exactly zero
/// gradient on both sides).
pub fn check_gradients<F>(
    params: &mut ParamStore,
    analytic: &Gradients,
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
    mut f: F,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for index in 0..params.get(id).data().len() {
            let a = analytic.get(id).data()[index];
            let n = central_difference(params, id, index, h, &mut f);
            let scale = a.abs().max(n.abs());
            let rel = if scale < abs_floor { 0.0 } else { (a - n).abs() / scale };
            report.checked += 1;
            if rel <= rel_tol {
                report.passed += 1;
            }
            if report.worst.as_ref().is_none_or(|w| rel > w.2) {
                report.worst = Some((params.name(id).to_string(), index, rel));
            }
        }
    }
    report
}
