//! Central finite-difference verification of reverse-mode gradients.

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Per-tensor outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub max_relative_error: f64,
    pub max_abs_analytic: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error() < tol
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval(loss: &mut impl FnMut(&ParamStore, &mut Graph) -> Result<Var>, store: &ParamStore) -> Result<f64> {
    let mut g = Graph::new();
    let root = loss(store, &mut g)?;
    let v = g.value(root);
    if !v.is_scalar() {
        return Err(Error::Graph("loss must be scalar".into()));
    }
    let v = v.data()[0];
    if !v.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {v}")));
    }
    Ok(v)
}

/// Compares the recorded gradient of `loss` against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` for every entry of every parameter.
///
/// `loss` must be deterministic in the parameters. The store's values are
/// restored on return and its gradient accumulators are left untouched.
pub fn gradient_check(
    store: &mut ParamStore,
    h: f64,
    mut loss: impl FnMut(&ParamStore, &mut Graph) -> Result<Var>,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let mut analytic = store.clone();
    analytic.zero_grads();
    {
        let mut g = Graph::new();
        let root = loss(store, &mut g)?;
        let v = g.value(root).data()[0];
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {v}")));
        }
        g.backward(root, &mut analytic)?;
    }
    let mut report = GradCheckReport::default();
    for pi in 0..store.len() {
        let n = store.params()[pi].value.len();
        let mut worst = 0.0f64;
        let mut max_a = 0.0f64;
        for k in 0..n {
            let orig = store.params()[pi].value.data()[k];
            store.params_mut()[pi].value.data_mut()[k] = orig + h;
            let fp = eval(&mut loss, store);
            store.params_mut()[pi].value.data_mut()[k] = orig - h;
            let fm = eval(&mut loss, store);
            store.params_mut()[pi].value.data_mut()[k] = orig;
            let numeric = (fp? - fm?) / (2.0 * h);
            let a = analytic.params()[pi].grad.data()[k];
            worst = worst.max(relative_error(a, numeric));
            max_a = max_a.max(a.abs());
        }
        report.tensors.push(TensorCheck {
            name: store.params()[pi].name.clone(),
            entries: n,
            max_relative_error: worst,
            max_abs_analytic: max_a,
        });
    }
    Ok(report)
}
