use super::params::ParamSet;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic` against central differences of `loss` with step `eps`.
pub fn grad_check<F>(params: &ParamSet, analytic: &[Tensor], eps: f64, mut loss: F) -> GradCheck
where
    F: FnMut(&ParamSet) -> f64,
{
    let mut probe = params.clone();
    let mut report = GradCheck { max_rel_error: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0 };
    for id in 0..params.len() {
        for e in 0..params.value(id).len() {
            let orig = params.value(id).data()[e];
            probe.value_mut(id).data_mut()[e] = orig + eps;
            let up = loss(&probe);
            probe.value_mut(id).data_mut()[e] = orig - eps;
            let down = loss(&probe);
            probe.value_mut(id).data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[id].data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            if rel > report.max_rel_error || rel.is_nan() {
                report = GradCheck { max_rel_error: rel, worst: (id, e), analytic: a, numeric };
            }
        }
    }
    report
}
