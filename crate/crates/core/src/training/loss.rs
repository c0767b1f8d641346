use crate::diffcore::{sigmoid, Graph, NodeId};
use crate::model::NodeOutputs;
use crate::Result;

/// Mixing weight `sigmoid(lambda_raw)`, always strictly inside `(0, 1)` for
/// finite input.
pub fn lambda_value(lambda_raw: f64) -> f64 {
    sigmoid(lambda_raw)
}

/// `lambda * L_domain + (1 - lambda) * L_intent` with
/// `lambda = sigmoid(lambda_raw)`. Models without a domain head contribute
/// the intent cross-entropy alone.
pub fn joint_loss(
    g: &mut Graph<'_>,
    out: &NodeOutputs,
    y_domain: usize,
    y_intent: usize,
    lambda_raw: NodeId,
) -> Result<NodeId> {
    let lt = g.softmax_xent(out.logits_intent, y_intent)?;
    let Some(logits_domain) = out.logits_domain else {
        return Ok(lt);
    };
    let ld = g.softmax_xent(logits_domain, y_domain)?;
    let lambda = g.sigmoid(lambda_raw);
    g.mix(lambda, ld, lt)
}
