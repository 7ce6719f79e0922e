//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::Rng;

use super::{Gradients, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates_checked: usize,
}

/// Relative error with a small absolute floor so vanishing gradients are
/// compared on an absolute scale.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares `analytic` against `(L(θ+h) − L(θ−h)) / 2h` on up to
/// `per_tensor` randomly chosen coordinates of every parameter tensor.
/// `params` is restored before returning.
pub fn check_gradients<R, F>(
    params: &mut ParamStore<f64>,
    analytic: &Gradients<f64>,
    per_tensor: usize,
    h: f64,
    rng: &mut R,
    mut loss: F,
) -> GradCheckReport
where
    R: Rng + ?Sized,
    F: FnMut(&ParamStore<f64>) -> f64,
{
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates_checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let picks = sample(rng, n, per_tensor.min(n));
        for i in picks.iter() {
            let orig = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = orig + h;
            let up = loss(params);
            params.get_mut(id).data_mut()[i] = orig - h;
            let down = loss(params);
            params.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).data()[i];
            let err = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if err > report.max_relative_error {
                report = GradCheckReport {
                    max_relative_error: err,
                    worst_param: params.name(id).to_string(),
                    worst_index: i,
                    analytic: a,
                    numeric,
                    coordinates_checked: report.coordinates_checked,
                };
            }
        }
    }
    report
}
