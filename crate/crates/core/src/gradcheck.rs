//! Finite-difference verification of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare tape gradients of `loss` against central differences for the
/// named parameters. At most `max_entries` coordinates per parameter are
/// probed, spread evenly over the tensor.
pub fn grad_check<F>(store: &ParamStore, names: &[&str], max_entries: usize, step: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new().with_all_param_grads();
    let out = loss(&mut g, store)?;
    g.backward(out)?;
    let grads = g.param_grads();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let v = loss(&mut g, s)?;
        Ok(g.value(v).data()[0])
    };
    let mut entries = Vec::new();
    let mut probe = store.clone();
    for &name in names {
        let n = store.get(name)?.len();
        let analytic = grads.get(name).ok_or_else(|| Error::MissingGradient(name.into()))?;
        let count = max_entries.min(n).max(1);
        for s in 0..count {
            let index = s * n / count;
            let orig = store.get(name)?.data()[index];
            probe.get_mut(name)?.data_mut()[index] = orig + step;
            let plus = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[index] = orig - step;
            let minus = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[index] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[index];
            entries.push(GradCheckEntry { name: name.into(), index, analytic: a, numeric, rel_err: relative_error(a, numeric) });
        }
    }
    Ok(GradCheckReport { entries })
}
