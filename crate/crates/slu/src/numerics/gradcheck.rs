//! Finite-difference verification of autodiff gradients.

use crate::error::{Result, SluError};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::ParamStore;

/// Outcome of a gradient check: the max relative error over all coordinates
/// and where it occurred.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

/// Scalar function of the parameters: builds a fresh graph and returns a
/// 1x1 loss node. Must be deterministic (fix any dropout seed inside).
pub type ScalarFn<'a> = dyn for<'g> Fn(&'g Graph, &ParamStore) -> Result<Var<'g>> + 'a;

/// Compare the autodiff gradient of `f` against central finite differences
/// (f(x+h) - f(x-h)) / 2h for every coordinate of every parameter.
/// Relative error per coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
pub fn grad_check(store: &mut ParamStore, f: &ScalarFn<'_>, h: f64) -> Result<GradCheckReport> {
    let analytic = {
        let graph = Graph::new();
        let loss = f(&graph, store)?;
        graph.backward(loss)?;
        graph.param_grads(store)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        coords_checked: 0,
    };

    for (name, grad) in &analytic {
        let n = store.get(name).len();
        for coord in 0..n {
            let f_plus = eval_perturbed(store, f, name, coord, h)?;
            let f_minus = eval_perturbed(store, f, name, coord, -h)?;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(SluError::Numeric(format!(
                    "non-finite evaluation while checking {name}[{coord}]"
                )));
            }
            let g_fd = (f_plus - f_minus) / (2.0 * h);
            let g_ad = grad.iter().nth(coord).copied().expect("coord in range");
            let rel = (g_ad - g_fd).abs() / 1.0_f64.max(g_ad.abs()).max(g_fd.abs());
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_coord = coord;
            }
        }
    }
    Ok(report)
}

fn eval_perturbed(
    store: &mut ParamStore,
    f: &ScalarFn<'_>,
    name: &str,
    coord: usize,
    delta: f64,
) -> Result<f64> {
    let mut value = store.get(name).clone();
    let cols = value.ncols();
    let idx = (coord / cols, coord % cols);
    let original = value[idx];
    value[idx] = original + delta;
    store.set(name, value)?;
    let result = {
        let graph = Graph::new();
        f(&graph, store).map(|loss| loss.item())
    };
    let mut value = store.get(name).clone();
    value[idx] = original;
    store.set(name, value)?;
    result
}
