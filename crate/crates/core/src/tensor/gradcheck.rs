//! Central finite-difference verification of recorded gradients.

use super::graph::{Graph, Var};
use super::params::{GradStore, ParamId, ParamStore};
use super::{Result, TensorError};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Gradient magnitude above which central differences with [`FD_STEP`]
/// resolve the relative error well below 1e-5 in 64-bit arithmetic.
pub const SIGNIFICANT_GRAD: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Largest `|analytic - numeric|` over all entries.
    pub max_abs_error: f64,
    /// Largest relative error over entries with magnitude at least
    /// [`SIGNIFICANT_GRAD`].
    pub max_rel_error_significant: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(ParamId, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub entries: usize,
}

fn evaluate<F>(params: &ParamStore<f64>, seed: Option<u64>, f: &F) -> Result<f64>
where
    F: for<'g, 'p> Fn(&'g mut Graph<'p, f64>) -> Var,
{
    let mut g = match seed {
        Some(s) => Graph::training(params, s),
        None => Graph::inference(params),
    };
    let out = f(&mut g);
    g.check()?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(TensorError::NotScalar(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares the recorded gradient of the scalar built by `f` with central
/// differences over every entry of the selected parameters (all when `ids` is
/// `None`). With `seed`, graphs run in training mode with a fixed dropout
/// stream so every evaluation sees the same masks.
pub fn gradient_check<F>(
    params: &mut ParamStore<f64>,
    ids: Option<&[ParamId]>,
    seed: Option<u64>,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'g, 'p> Fn(&'g mut Graph<'p, f64>) -> Var,
{
    let mut grads = GradStore::zeros_like(params);
    {
        let mut g = match seed {
            Some(s) => Graph::training(params, s),
            None => Graph::new(params),
        };
        let out = f(&mut g);
        let shape = g.shape(out).to_vec();
        if g.value(out).len() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        g.backward(out, &mut grads)?;
    }
    let ids: Vec<ParamId> = match ids {
        Some(ids) => ids.to_vec(),
        None => params.ids().collect(),
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        max_rel_error_significant: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        entries: 0,
    };
    for id in ids {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let plus = evaluate(params, seed, &f)?;
            params.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let minus = evaluate(params, seed, &f)?;
            params.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grads.get(id).data()[k];
            let err = relative_error(analytic, numeric);
            report.entries += 1;
            report.max_abs_error = report.max_abs_error.max((analytic - numeric).abs());
            if analytic.abs().max(numeric.abs()) >= SIGNIFICANT_GRAD {
                report.max_rel_error_significant = report.max_rel_error_significant.max(err);
            }
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = Some((id, k));
                report.analytic_at_worst = analytic;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

impl GradCheckReport {
    /// Relative agreement on well-resolved entries and absolute agreement
    /// at the finite-difference noise level everywhere else.
    pub fn agrees(&self, rel: f64, abs: f64) -> bool {
        self.max_rel_error_significant < rel && self.max_abs_error < abs
    }
}
