//! Define-by-run reverse-mode differentiation over dense `f64` vectors.
//!
//! A [`Graph`] records every primitive as it is evaluated. Leaves either
//! borrow their storage (model parameters) or own it (per-example inputs),
//! so building a graph over a large model does not copy weights. Node ids
//! are handed out in evaluation order, which makes the reverse pass a plain
//! descending sweep and fixes the gradient accumulation order.

mod gradcheck;
mod tensor;

use std::borrow::Cow;

pub use gradcheck::{grad_check, grad_check_with_step, FD_STEP};
pub use tensor::Tensor;

use crate::{Error, Result};

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: f64,
    },
    MeanPool(Vec<NodeId>),
    SoftmaxXent {
        logits: NodeId,
        target: usize,
        probs: Vec<f64>,
    },
    Sigmoid(NodeId),
    Mix {
        weight: NodeId,
        a: NodeId,
        b: NodeId,
    },
    Sum(NodeId),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, [f64]>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, [f64]>, shape: Vec<usize>, op: Op, requires_grad: bool) -> NodeId {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node<'a> {
        &self.nodes[id.0]
    }

    /// Borrowed leaf that receives a gradient.
    pub fn param(&mut self, t: &'a Tensor) -> NodeId {
        self.push(Cow::Borrowed(t.data()), t.shape().to_vec(), Op::Leaf, true)
    }

    /// Borrowed leaf without a gradient.
    pub fn constant(&mut self, t: &'a Tensor) -> NodeId {
        self.push(Cow::Borrowed(t.data()), t.shape().to_vec(), Op::Leaf, false)
    }

    /// Vector leaf from a slice or owned buffer; `trainable` decides whether
    /// the reverse pass produces a gradient for it.
    pub fn vector(&mut self, values: impl Into<Cow<'a, [f64]>>, trainable: bool) -> NodeId {
        let values = values.into();
        let n = values.len();
        self.push(values, vec![n], Op::Leaf, trainable)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.node(id).value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.node(id).shape
    }

    /// Softmax probabilities cached by a `softmax_xent` node.
    pub fn probs(&self, id: NodeId) -> Option<&[f64]> {
        match &self.node(id).op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn grad_flag(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&id| self.node(id).requires_grad)
    }

    /// `W x + b` for `W` of shape `[m, n]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let ws = self.shape(w);
        if ws.len() != 2 {
            return Err(Error::dim("linear", format!("weight must be a matrix, got shape {ws:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        let (xl, bl) = (self.value(x).len(), self.value(b).len());
        if xl != n {
            return Err(Error::dim("linear", format!("input x has {xl} entries, weight W expects {n}")));
        }
        if bl != m {
            return Err(Error::dim("linear", format!("bias b has {bl} entries, weight W produces {m}")));
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let out: Vec<f64> = (0..m)
            .map(|r| {
                let row = &wv[r * n..(r + 1) * n];
                bv[r] + row.iter().zip(xv).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect();
        let rg = self.grad_flag(&[x, w, b]);
        Ok(self.push(Cow::Owned(out), vec![m], Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.grad_flag(&[x]);
        self.push(Cow::Owned(out), shape, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(Error::dim("add", format!("operands have {} and {} entries", av.len(), bv.len())));
        }
        let out: Vec<f64> = av.iter().zip(bv).map(|(p, q)| p + q).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(Cow::Owned(out), shape, Op::Add(a, b), rg))
    }

    /// `gamma * (x - mean) / sqrt(var + eps) + beta` with population variance.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::EmptySequence("layer_norm"));
        }
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            let l = self.value(id).len();
            if l != n {
                return Err(Error::dim("layer_norm", format!("{name} has {l} entries, x has {n}")));
            }
        }
        let xv = self.value(x);
        let mean = xv.iter().sum::<f64>() / n as f64;
        let var = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        let xhat: Vec<f64> = xv.iter().map(|v| (v - mean) * inv_std).collect();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let out: Vec<f64> = xhat.iter().zip(gv).zip(bv).map(|((h, g), b)| g * h + b).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.grad_flag(&[x, gamma, beta]);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        Ok(self.push(Cow::Owned(out), shape, op, rg))
    }

    /// Elementwise mean of equally sized rows.
    pub fn mean_pool(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = *rows.first().ok_or(Error::EmptySequence("mean_pool"))?;
        let n = self.value(first).len();
        let mut acc = vec![0.0; n];
        for &r in rows {
            let v = self.value(r);
            if v.len() != n {
                return Err(Error::dim("mean_pool", format!("row of {} entries, expected {n}", v.len())));
            }
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        let k = rows.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        let shape = self.shape(first).to_vec();
        let rg = self.grad_flag(rows);
        Ok(self.push(Cow::Owned(acc), shape, Op::MeanPool(rows.to_vec()), rg))
    }

    /// Cross-entropy of `softmax(logits)` against `target`, as a scalar node.
    pub fn softmax_xent(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        if target >= lv.len() {
            return Err(Error::Label {
                index: target,
                classes: lv.len(),
            });
        }
        if lv.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericInstability("non-finite logits".into()));
        }
        let max = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = lv.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let loss = lse - lv[target];
        let probs = softmax(lv);
        let rg = self.grad_flag(&[logits]);
        let op = Op::SoftmaxXent { logits, target, probs };
        Ok(self.push(Cow::Owned(vec![loss]), vec![1], op, rg))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.grad_flag(&[x]);
        self.push(Cow::Owned(out), shape, Op::Sigmoid(x), rg)
    }

    /// Scalar convex combination `weight * a + (1 - weight) * b`.
    pub fn mix(&mut self, weight: NodeId, a: NodeId, b: NodeId) -> Result<NodeId> {
        for id in [weight, a, b] {
            let l = self.value(id).len();
            if l != 1 {
                return Err(Error::dim("mix", format!("operands must be scalars, got {l} entries")));
            }
        }
        let (w, av, bv) = (self.value(weight)[0], self.value(a)[0], self.value(b)[0]);
        let out = w * av + (1.0 - w) * bv;
        let rg = self.grad_flag(&[weight, a, b]);
        Ok(self.push(Cow::Owned(vec![out]), vec![1], Op::Mix { weight, a, b }, rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().sum::<f64>();
        let rg = self.grad_flag(&[x]);
        self.push(Cow::Owned(vec![s]), vec![1], Op::Sum(x), rg)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let ll = self.value(loss).len();
        if ll != 1 {
            return Err(Error::dim("backward", format!("loss must be a scalar, got {ll} entries")));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericInstability(format!("non-finite gradient at node {i}")));
            }
            self.propagate(&node.op, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, f: impl FnOnce(&mut [f64])) {
        let node = self.node(id);
        if !node.requires_grad {
            return;
        }
        let slot = grads[id.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
        f(slot);
    }

    fn propagate(&self, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let n = self.value(*x).len();
                let wv = self.value(*w);
                self.accumulate(grads, *x, |dx| {
                    for (r, gr) in g.iter().enumerate() {
                        let row = &wv[r * n..(r + 1) * n];
                        for (d, wrc) in dx.iter_mut().zip(row) {
                            *d += gr * wrc;
                        }
                    }
                });
                let xv = self.value(*x);
                self.accumulate(grads, *w, |dw| {
                    for (r, gr) in g.iter().enumerate() {
                        for (d, xc) in dw[r * n..(r + 1) * n].iter_mut().zip(xv) {
                            *d += gr * xc;
                        }
                    }
                });
                self.accumulate(grads, *b, |db| add_into(db, g));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, |dx| {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |da| add_into(da, g));
                self.accumulate(grads, *b, |db| add_into(db, g));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                self.accumulate(grads, *gamma, |dg| {
                    for ((d, gi), h) in dg.iter_mut().zip(g).zip(xhat) {
                        *d += gi * h;
                    }
                });
                self.accumulate(grads, *beta, |db| add_into(db, g));
                let n = xhat.len() as f64;
                let dxhat: Vec<f64> = g.iter().zip(gv).map(|(gi, ga)| gi * ga).collect();
                let mean_d = dxhat.iter().sum::<f64>() / n;
                let mean_dh = dxhat.iter().zip(xhat).map(|(d, h)| d * h).sum::<f64>() / n;
                self.accumulate(grads, *x, |dx| {
                    for ((d, dh), h) in dx.iter_mut().zip(&dxhat).zip(xhat) {
                        *d += inv_std * (dh - mean_d - h * mean_dh);
                    }
                });
            }
            Op::MeanPool(rows) => {
                let k = rows.len() as f64;
                for &r in rows {
                    self.accumulate(grads, r, |dr| {
                        for (d, gi) in dr.iter_mut().zip(g) {
                            *d += gi / k;
                        }
                    });
                }
            }
            Op::SoftmaxXent { logits, target, probs } => {
                let up = g[0];
                self.accumulate(grads, *logits, |dl| {
                    for (c, (d, p)) in dl.iter_mut().zip(probs).enumerate() {
                        let y = if c == *target { 1.0 } else { 0.0 };
                        *d += up * (p - y);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let out: Vec<f64> = self.value(*x).iter().map(|&v| sigmoid(v)).collect();
                self.accumulate(grads, *x, |dx| {
                    for ((d, gi), s) in dx.iter_mut().zip(g).zip(&out) {
                        *d += gi * s * (1.0 - s);
                    }
                });
            }
            Op::Mix { weight, a, b } => {
                let up = g[0];
                let w = self.value(*weight)[0];
                let (av, bv) = (self.value(*a)[0], self.value(*b)[0]);
                self.accumulate(grads, *weight, |d| d[0] += up * (av - bv));
                self.accumulate(grads, *a, |d| d[0] += up * w);
                self.accumulate(grads, *b, |d| d[0] += up * (1.0 - w));
            }
            Op::Sum(x) => {
                let up = g[0];
                self.accumulate(grads, *x, |dx| dx.iter_mut().for_each(|d| *d += up));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients from one reverse pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the node was unreachable from the loss or needs no gradient.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Vec<f64>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
