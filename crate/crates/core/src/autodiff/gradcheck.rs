use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Denominator floor for relative error, so entries whose true gradient is
/// zero are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval(store: &ParamStore, build: &impl Fn(&mut Graph) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new(store);
    let loss = build(&mut g)?;
    Ok(g.value(loss).data()[0])
}

/// Compares the backward gradient of every parameter entry with a central
/// difference `(f(x + eps) - f(x - eps)) / 2 eps` and reports the worst
/// relative error. The store's values are restored before returning.
pub fn finite_difference_check(
    store: &mut ParamStore,
    eps: f64,
    build: impl Fn(&mut Graph) -> Result<Var>,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!(
            "perturbation {eps} outside [1e-7, 1e-3]"
        )));
    }
    let grads = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.backward(loss)?
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).numel();
        for j in 0..n {
            let original = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = original + eps;
            let up = eval(store, &build)?;
            store.value_mut(id).data_mut()[j] = original - eps;
            let down = eval(store, &build)?;
            store.value_mut(id).data_mut()[j] = original;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get(id).map(|g| g.data()[j]).unwrap_or(0.0);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst_param = store.get(id).name.clone();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}
