use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Graph, NodeId, Tensor};
use crate::{Error, Result};

pub const PARAM_COUNT: usize = 13;

/// Dense learnable tensors of the joint model.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w_d: Tensor,
    pub b_d: Tensor,
    pub ln_d_gamma: Tensor,
    pub ln_d_beta: Tensor,
    pub w_t: Tensor,
    pub b_t: Tensor,
    pub ln_t_gamma: Tensor,
    pub ln_t_beta: Tensor,
    pub head_d_w: Tensor,
    pub head_d_b: Tensor,
    pub head_t_w: Tensor,
    pub head_t_b: Tensor,
    pub lambda_raw: Tensor,
}

/// Graph leaves for [`Params`], in the same order as [`Params::NAMES`].
#[derive(Debug, Clone, Copy)]
pub struct ParamNodes {
    pub w_d: NodeId,
    pub b_d: NodeId,
    pub ln_d_gamma: NodeId,
    pub ln_d_beta: NodeId,
    pub w_t: NodeId,
    pub b_t: NodeId,
    pub ln_t_gamma: NodeId,
    pub ln_t_beta: NodeId,
    pub head_d_w: NodeId,
    pub head_d_b: NodeId,
    pub head_t_w: NodeId,
    pub head_t_b: NodeId,
    pub lambda_raw: NodeId,
}

impl ParamNodes {
    pub fn from_slice(ids: &[NodeId]) -> Self {
        assert_eq!(ids.len(), PARAM_COUNT, "expected one node per parameter");
        Self {
            w_d: ids[0],
            b_d: ids[1],
            ln_d_gamma: ids[2],
            ln_d_beta: ids[3],
            w_t: ids[4],
            b_t: ids[5],
            ln_t_gamma: ids[6],
            ln_t_beta: ids[7],
            head_d_w: ids[8],
            head_d_b: ids[9],
            head_t_w: ids[10],
            head_t_b: ids[11],
            lambda_raw: ids[12],
        }
    }

    pub fn to_array(&self) -> [NodeId; PARAM_COUNT] {
        [
            self.w_d,
            self.b_d,
            self.ln_d_gamma,
            self.ln_d_beta,
            self.w_t,
            self.b_t,
            self.ln_t_gamma,
            self.ln_t_beta,
            self.head_d_w,
            self.head_d_b,
            self.head_t_w,
            self.head_t_b,
            self.lambda_raw,
        ]
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()).expect("valid shape")
}

impl Params {
    pub const NAMES: [&'static str; PARAM_COUNT] = [
        "w_d",
        "b_d",
        "ln_d_gamma",
        "ln_d_beta",
        "w_t",
        "b_t",
        "ln_t_gamma",
        "ln_t_beta",
        "head_d_w",
        "head_d_b",
        "head_t_w",
        "head_t_b",
        "lambda_raw",
    ];

    pub(super) fn init(rng: &mut ChaCha8Rng, h: usize, m: usize, n: usize) -> Self {
        let bound = 1.0 / (h as f64).sqrt();
        let w_d = uniform(rng, vec![h, h], bound);
        let b_d = uniform(rng, vec![h], bound);
        let w_t = uniform(rng, vec![h, h], bound);
        let b_t = uniform(rng, vec![h], bound);
        let head_d_w = uniform(rng, vec![m, h], bound);
        let head_d_b = uniform(rng, vec![m], bound);
        let head_t_w = uniform(rng, vec![n, h], bound);
        let head_t_b = uniform(rng, vec![n], bound);
        Self {
            w_d,
            b_d,
            ln_d_gamma: Tensor::filled(vec![h], 1.0),
            ln_d_beta: Tensor::zeros(vec![h]),
            w_t,
            b_t,
            ln_t_gamma: Tensor::filled(vec![h], 1.0),
            ln_t_beta: Tensor::zeros(vec![h]),
            head_d_w,
            head_d_b,
            head_t_w,
            head_t_b,
            lambda_raw: Tensor::scalar(0.0),
        }
    }

    pub fn tensors(&self) -> [&Tensor; PARAM_COUNT] {
        [
            &self.w_d,
            &self.b_d,
            &self.ln_d_gamma,
            &self.ln_d_beta,
            &self.w_t,
            &self.b_t,
            &self.ln_t_gamma,
            &self.ln_t_beta,
            &self.head_d_w,
            &self.head_d_b,
            &self.head_t_w,
            &self.head_t_b,
            &self.lambda_raw,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; PARAM_COUNT] {
        [
            &mut self.w_d,
            &mut self.b_d,
            &mut self.ln_d_gamma,
            &mut self.ln_d_beta,
            &mut self.w_t,
            &mut self.b_t,
            &mut self.ln_t_gamma,
            &mut self.ln_t_beta,
            &mut self.head_d_w,
            &mut self.head_d_b,
            &mut self.head_t_w,
            &mut self.head_t_b,
            &mut self.lambda_raw,
        ]
    }

    /// Build from tensors in [`Self::NAMES`] order.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let arr: [Tensor; PARAM_COUNT] = tensors
            .try_into()
            .map_err(|v: Vec<Tensor>| Error::dim("params", format!("expected {PARAM_COUNT} tensors, got {}", v.len())))?;
        let [w_d, b_d, ln_d_gamma, ln_d_beta, w_t, b_t, ln_t_gamma, ln_t_beta, head_d_w, head_d_b, head_t_w, head_t_b, lambda_raw] =
            arr;
        Ok(Self {
            w_d,
            b_d,
            ln_d_gamma,
            ln_d_beta,
            w_t,
            b_t,
            ln_t_gamma,
            ln_t_beta,
            head_d_w,
            head_d_b,
            head_t_w,
            head_t_b,
            lambda_raw,
        })
    }

    /// Whether decoupled weight decay applies: weight matrices only.
    pub fn decays(index: usize) -> bool {
        matches!(Self::NAMES[index], "w_d" | "w_t" | "head_d_w" | "head_t_w")
    }

    /// Verify every shape against `h`; returns `(m, n)`.
    pub fn check_shapes(&self, h: usize) -> Result<(usize, usize)> {
        let m = self.head_d_b.len();
        let n = self.head_t_b.len();
        let expected: [Vec<usize>; PARAM_COUNT] = [
            vec![h, h],
            vec![h],
            vec![h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h],
            vec![h],
            vec![m, h],
            vec![m],
            vec![n, h],
            vec![n],
            vec![1],
        ];
        for ((name, t), shape) in Self::NAMES.iter().zip(self.tensors()).zip(&expected) {
            if t.shape() != shape.as_slice() {
                return Err(Error::dim("params", format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
        if m < 2 || n < 2 {
            return Err(Error::dim("params", format!("need at least two domains and intents, got {m} and {n}")));
        }
        Ok((m, n))
    }

    pub(super) fn nodes<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> ParamNodes {
        let ids: Vec<NodeId> = self
            .tensors()
            .into_iter()
            .map(|t| if trainable { g.param(t) } else { g.constant(t) })
            .collect();
        ParamNodes::from_slice(&ids)
    }

    pub(super) fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.round_to_f32();
        }
    }
}
