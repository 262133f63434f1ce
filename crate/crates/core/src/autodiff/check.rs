//! Central finite differences as an independent gradient oracle.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest `|analytic - numeric| / max(1, |analytic|)` over every coordinate
/// of `params`, where `f` builds a scalar loss from the parameter node.
pub fn finite_diff_check<F>(f: F, params: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    finite_diff_check_many(|g, ids| f(g, ids[0]), std::slice::from_ref(params), h)
}

/// Multi-tensor form of [`finite_diff_check`].
pub fn finite_diff_check_many<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.parameter(p.clone())).collect();
    let loss = f(&mut g, &ids)?;
    let value = g.value(loss)?.item()?;
    if !value.is_finite() {
        return Err(Error::Oracle(format!("loss is not finite: {value}")));
    }
    g.backward(loss)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| g.grad(id)).collect::<Result<_>>()?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = perturbed.iter().map(|p| g.parameter(p.clone())).collect();
        let loss = f(&mut g, &ids)?;
        let v = g.value(loss)?.item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Oracle(format!("perturbed loss is not finite: {v}")))
        }
    };

    let mut worst = 0.0_f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for j in 0..params[t].len() {
            let orig = params[t].data()[j];
            work[t].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[t].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[t].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
