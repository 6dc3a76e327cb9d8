use alloc::string::String;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Denominator floor: gradients smaller than this are compared absolutely.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
            max_per_param: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and element index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares tape gradients of a scalar function of `store` against central
/// finite differences. `f` must build its graph from parameters of `store`
/// and return a scalar node.
pub fn grad_check<F>(store: &ParamStore<f64>, cfg: GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>, &mut Graph<f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(s, &mut g)?;
        let v = g.value(out).data()[0];
        if !v.is_finite() {
            return Err(Error::NumericFault("grad_check objective".into()));
        }
        Ok(v)
    };
    let mut g = Graph::new();
    let out = f(store, &mut g)?;
    g.check_finite()?;
    let grads = g.backward(out)?;
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for id in store.ids() {
        let p = store.param(id);
        if !p.trainable {
            continue;
        }
        let n = p.value.len();
        let step = match cfg.max_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(step) {
            let orig = p.value.data()[i];
            probe.get_mut(id).data_mut()[i] = orig + cfg.eps;
            let fp = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - cfg.eps;
            let fm = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[i]);
            let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((p.name.clone(), i));
                    report.analytic = analytic;
                    report.numeric = numeric;
                }
            }
        }
    }
    Ok(report)
}
