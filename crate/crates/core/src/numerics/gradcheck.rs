//! Central finite-difference verification of analytic gradients.

use std::sync::Arc;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use crate::error::Result;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Entries whose relative error exceeds the tolerance.
    pub flagged: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub epsilon: f64,
    /// False when re-evaluating at the unperturbed point changed the loss.
    pub deterministic: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.deterministic && self.params.iter().all(|p| p.flagged.is_empty())
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Checks every parameter of `store`.
pub fn grad_check<F>(
    loss_fn: F,
    store: &mut ParamStore,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    grad_check_params(loss_fn, store, &ids, epsilon, tolerance)
}

/// Compares analytic gradients with `(f(θ+ε) − f(θ−ε)) / 2ε` for each entry
/// of the listed parameters.
///
/// The loss is first evaluated in recording mode; perturbed evaluations replay
/// the recorded stop-gradient values and index choices, so the numeric
/// derivative is taken with those held fixed.
pub fn grad_check_params<F>(
    loss_fn: F,
    store: &mut ParamStore,
    params: &[ParamId],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    let base = g.value(loss).item();
    g.backward(loss, store)?;
    let frozen = Arc::new(g.into_frozen());

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::replay(Arc::clone(&frozen));
        let loss = loss_fn(&mut g, store)?;
        Ok(g.value(loss).item())
    };

    let deterministic = eval(store)?.to_bits() == base.to_bits() && eval(store)?.to_bits() == base.to_bits();

    let mut report = GradCheckReport {
        params: Vec::with_capacity(params.len()),
        tolerance,
        epsilon,
        deterministic,
    };
    for &p in params {
        let analytic = store.grad(p).data().to_vec();
        let mut check = ParamCheck {
            name: store.name(p).to_string(),
            entries: analytic.len(),
            max_rel_error: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
            flagged: Vec::new(),
        };
        for i in 0..analytic.len() {
            let original = store.value(p).data()[i];
            store.value_mut(p).data_mut()[i] = original + epsilon;
            let plus = eval(store)?;
            store.value_mut(p).data_mut()[i] = original - epsilon;
            let minus = eval(store)?;
            store.value_mut(p).data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(analytic[i], numeric);
            if err > check.max_rel_error || i == 0 {
                check.max_rel_error = err;
                check.worst_entry = i;
                check.analytic = analytic[i];
                check.numeric = numeric;
            }
            if err > tolerance {
                check.flagged.push(i);
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
