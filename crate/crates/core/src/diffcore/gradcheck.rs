use super::{Graph, NodeId, Tensor};
use crate::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Largest relative disagreement between the analytic gradient of `f` and
/// central finite differences, over every entry of every tensor in `point`.
///
/// `f` receives a fresh graph and one parameter node per tensor, in order,
/// and must return a scalar node. Relative error is
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(point: &[Tensor], f: F) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, &[NodeId]) -> Result<NodeId>,
{
    grad_check_with_step(point, FD_STEP, f)
}

pub fn grad_check_with_step<F>(point: &[Tensor], step: f64, f: F) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, &[NodeId]) -> Result<NodeId>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = point.iter().map(|t| g.param(t)).collect();
        let loss = f(&mut g, &ids)?;
        check_scalar(&g, loss)?;
        let grads = g.backward(loss)?;
        ids.iter()
            .zip(point)
            .map(|(id, t)| grads.get(*id).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            .collect()
    };

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.constant(t)).collect();
        let loss = f(&mut g, &ids)?;
        check_scalar(&g, loss)
    };

    let mut work = point.to_vec();
    let mut worst = 0.0f64;
    for (ti, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let orig = work[ti].data()[k];
            work[ti].data_mut()[k] = orig + step;
            let fp = eval(&work)?;
            work[ti].data_mut()[k] = orig - step;
            let fm = eval(&work)?;
            work[ti].data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn check_scalar(g: &Graph<'_>, loss: NodeId) -> Result<f64> {
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::dim("grad_check", format!("function must return a scalar, got {} entries", v.len())));
    }
    if !v[0].is_finite() {
        return Err(Error::NumericInstability("function value is not finite".into()));
    }
    Ok(v[0])
}
