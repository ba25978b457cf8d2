//! Central finite-difference oracle for gradient verification.
//!
//! Independent of the reverse-mode path: it only re-runs user-supplied
//! forward closures at perturbed parameter values. Used by the gradient
//! integrity suites; never by training code.

use super::params::{ParamId, ParamStore};
use super::{Graph, NodeId, Tensor};

/// Result of checking one parameter coordinate.
#[derive(Debug)]
pub struct GradCheckFailure {
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Checks the analytic gradient of `forward` (a scalar-valued graph builder)
/// against central finite differences for every coordinate of every
/// trainable parameter in `store`.
///
/// Tolerance: relative error below `rel_tol` with an absolute floor of
/// `abs_floor` (coordinates where both gradients are under the floor pass).
pub fn check_gradients<F>(
    store: &mut ParamStore,
    forward: F,
    step: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<(), GradCheckFailure>
where
    F: Fn(&mut Graph, &ParamStore) -> NodeId,
{
    // analytic pass
    let mut g = Graph::new();
    let loss = forward(&mut g, store);
    let back = g.backward(loss).expect("backward on gradcheck loss");
    let mut analytic: Vec<Option<Tensor>> = (0..store.len()).map(|_| None).collect();
    for (id, grad) in back.param_grads {
        analytic[id.index()] = Some(grad);
    }

    let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        let n = store.value(id).numel();
        for coord in 0..n {
            let orig = store.value(id).data()[coord];

            store.value_mut(id).data_mut()[coord] = orig + step;
            let mut gp = Graph::new();
            let lp = forward(&mut gp, store);
            let f_plus = gp.value(lp).scalar_value();

            store.value_mut(id).data_mut()[coord] = orig - step;
            let mut gm = Graph::new();
            let lm = forward(&mut gm, store);
            let f_minus = gm.value(lm).scalar_value();

            store.value_mut(id).data_mut()[coord] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let a = analytic[id.index()]
                .as_ref()
                .map(|t| t.data()[coord])
                .unwrap_or(0.0);

            if a.abs() < abs_floor && numeric.abs() < abs_floor {
                continue;
            }
            let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(abs_floor);
            if rel_err > rel_tol {
                return Err(GradCheckFailure {
                    param: store.name(id).to_string(),
                    coord,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(())
}

/// Default check at the standard tolerances: step 1e-5, relative error below
/// 1e-3, absolute floor 1e-5, all at 64-bit precision.
pub fn check_gradients_default<F>(store: &mut ParamStore, forward: F) -> Result<(), GradCheckFailure>
where
    F: Fn(&mut Graph, &ParamStore) -> NodeId,
{
    check_gradients(store, forward, 1e-5, 1e-3, 1e-5)
}
