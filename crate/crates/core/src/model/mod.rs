//! The joint domain/intent network.
//!
//! Every structure is built from one residual block,
//! `out = LayerNorm(ReLU(W x + b) + residual)`, and differs only in what
//! each block reads:
//!
//! | structure           | domain block `(x, residual)` | intent block `(x, residual)` |
//! |---------------------|------------------------------|------------------------------|
//! | `HierDomainFirst`   | `(h, h)`                     | `(d + h, d)`                 |
//! | `HierIntentFirst`   | `(t + h, t)`                 | `(h, h)`                     |
//! | `FlatSplit`         | `(h, h)`                     | `(h, h)`                     |
//! | `FlatShared`        | none, `d = h`                | none, `t = h`                |
//!
//! `SingleHead` is the intent-only baseline: a softmax head directly on `h`
//! with no domain head and no mixing weight.

mod params;

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use params::{ParamNodes, Params, PARAM_COUNT};

use crate::diffcore::{softmax, Graph, NodeId, LAYER_NORM_EPS};
use crate::encoder::{HashEncoder, PooledVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// Both heads read the pooled vector directly.
    FlatShared,
    /// Independent domain and intent blocks over the pooled vector.
    FlatSplit,
    /// The intent block runs first and feeds the domain block.
    HierIntentFirst,
    /// The domain block runs first and feeds the intent block.
    HierDomainFirst,
    /// Intent head only.
    SingleHead,
}

impl Structure {
    pub const JOINT: [Structure; 4] = [
        Structure::FlatShared,
        Structure::FlatSplit,
        Structure::HierIntentFirst,
        Structure::HierDomainFirst,
    ];

    pub fn is_joint(self) -> bool {
        self != Structure::SingleHead
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Structure::FlatShared => "flat_shared",
            Structure::FlatSplit => "flat_split",
            Structure::HierIntentFirst => "hier_intent_first",
            Structure::HierDomainFirst => "hier_domain_first",
            Structure::SingleHead => "single_head",
        }
    }

    /// Short notation used in reports, e.g. `H(s_d->s_t)`.
    pub fn notation(self) -> &'static str {
        match self {
            Structure::FlatShared => "F(h;h)",
            Structure::FlatSplit => "F(s_d;s_t)",
            Structure::HierIntentFirst => "H(s_t->s_d)",
            Structure::HierDomainFirst => "H(s_d->s_t)",
            Structure::SingleHead => "intent-only",
        }
    }
}

impl std::fmt::Display for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Structure::SingleHead]
            .into_iter()
            .chain(Structure::JOINT)
            .find(|v| v.as_str() == s || v.notation() == s)
            .ok_or_else(|| Error::Config(format!("unknown structure {s:?}")))
    }
}

/// Source of the pooled vector the model was trained on.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Hashed(HashEncoder),
    /// Precomputed vectors of this dimension, supplied at inference time.
    External { dim: usize },
}

impl Encoder {
    pub fn dim(&self) -> usize {
        match self {
            Encoder::Hashed(h) => h.config().dim,
            Encoder::External { dim } => *dim,
        }
    }

    pub fn hashed(&self) -> Option<&HashEncoder> {
        match self {
            Encoder::Hashed(h) => Some(h),
            Encoder::External { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    structure: Structure,
    dim: usize,
    num_domains: usize,
    num_intents: usize,
    params: Params,
    encoder: Encoder,
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct NodeOutputs {
    pub logits_domain: Option<NodeId>,
    pub logits_intent: NodeId,
    pub d: NodeId,
    pub t: NodeId,
    pub s_d: Option<NodeId>,
    pub s_t: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `None` for the intent-only baseline.
    pub p_domain: Option<Vec<f64>>,
    pub p_intent: Vec<f64>,
    pub d: Vec<f64>,
    pub t: Vec<f64>,
    pub s_d: Option<Vec<f64>>,
    pub s_t: Option<Vec<f64>>,
}

impl JointModel {
    /// Fresh model with uniform `±1/sqrt(fan_in)` weights and biases, unit
    /// layer-norm gain, zero shift and `lambda_raw = 0`.
    pub fn new(structure: Structure, num_domains: usize, num_intents: usize, encoder: Encoder, seed: u64) -> Result<Self> {
        let dim = encoder.dim();
        if dim == 0 {
            return Err(Error::Config("representation dimension must be positive".into()));
        }
        if num_domains < 2 || num_intents < 2 {
            return Err(Error::Config(format!(
                "need at least two domains and two intents, got {num_domains} and {num_intents}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&mut rng, dim, num_domains, num_intents);
        Ok(Self {
            structure,
            dim,
            num_domains,
            num_intents,
            params,
            encoder,
        })
    }

    pub(crate) fn from_parts(structure: Structure, params: Params, encoder: Encoder) -> Result<Self> {
        let dim = encoder.dim();
        let (num_domains, num_intents) = params.check_shapes(dim)?;
        Ok(Self {
            structure,
            dim,
            num_domains,
            num_intents,
            params,
            encoder,
        })
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn num_intents(&self) -> usize {
        self.num_intents
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut Encoder {
        &mut self.encoder
    }

    /// Split borrow for the optimizer: dense parameters and the encoder.
    pub fn params_and_encoder_mut(&mut self) -> (&mut Params, &mut Encoder) {
        (&mut self.params, &mut self.encoder)
    }

    /// Current mixing weight `sigmoid(lambda_raw)`.
    pub fn lambda(&self) -> f64 {
        crate::training::lambda_value(self.params.lambda_raw.data()[0])
    }

    /// Round every stored value through `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        self.params.round_to_f32();
        if let Encoder::Hashed(h) = &mut self.encoder {
            h.round_to_f32();
        }
    }

    /// Leaves for every dense parameter, borrowing this model's storage.
    pub fn param_nodes<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> ParamNodes {
        self.params.nodes(g, trainable)
    }

    fn check_hbar(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::dim("forward", format!("pooled vector has {len} entries, model expects {}", self.dim)));
        }
        Ok(())
    }

    /// Wire the configured structure on top of `hbar`.
    pub fn forward_nodes(&self, g: &mut Graph<'_>, p: &ParamNodes, hbar: NodeId) -> Result<NodeOutputs> {
        self.check_hbar(g.value(hbar).len())?;
        forward_structure(self.structure, g, p, hbar)
    }

    pub fn forward(&self, hbar: &PooledVector) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let p = self.param_nodes(&mut g, false);
        let h = g.vector(hbar.values(), false);
        let out = self.forward_nodes(&mut g, &p, h)?;
        let read = |id: Option<NodeId>| id.map(|n| g.value(n).to_vec());
        Ok(ForwardOutput {
            p_domain: out.logits_domain.map(|n| softmax(g.value(n))),
            p_intent: softmax(g.value(out.logits_intent)),
            d: g.value(out.d).to_vec(),
            t: g.value(out.t).to_vec(),
            s_d: read(out.s_d),
            s_t: read(out.s_t),
        })
    }

    /// `(s_d, d)` of the domain block applied to the pooled vector.
    pub fn domain_block(&self, hbar: &PooledVector) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_hbar(hbar.dim())?;
        let mut g = Graph::new();
        let p = self.param_nodes(&mut g, false);
        let h = g.vector(hbar.values(), false);
        let (s, out) = block(&mut g, h, h, p.w_d, p.b_d, p.ln_d_gamma, p.ln_d_beta)?;
        Ok((g.value(s).to_vec(), g.value(out).to_vec()))
    }

    /// `(s_t, t)` of the intent block fed by the domain representation `d`.
    pub fn intent_block(&self, hbar: &PooledVector, d: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_hbar(hbar.dim())?;
        self.check_hbar(d.len())?;
        let mut g = Graph::new();
        let p = self.param_nodes(&mut g, false);
        let h = g.vector(hbar.values(), false);
        let dn = g.vector(d, false);
        let x = g.add(dn, h)?;
        let (s, out) = block(&mut g, x, dn, p.w_t, p.b_t, p.ln_t_gamma, p.ln_t_beta)?;
        Ok((g.value(s).to_vec(), g.value(out).to_vec()))
    }

    /// Intent distribution from the intent head applied directly to `hbar`.
    pub fn single_head_baseline(&self, hbar: &PooledVector) -> Result<Vec<f64>> {
        self.check_hbar(hbar.dim())?;
        let mut g = Graph::new();
        let p = self.param_nodes(&mut g, false);
        let h = g.vector(hbar.values(), false);
        let logits = g.linear(h, p.head_t_w, p.head_t_b)?;
        Ok(softmax(g.value(logits)))
    }
}

/// `s = relu(W x + b)`, `out = layer_norm(s + residual)`.
fn block(
    g: &mut Graph<'_>,
    x: NodeId,
    residual: NodeId,
    w: NodeId,
    b: NodeId,
    gamma: NodeId,
    beta: NodeId,
) -> Result<(NodeId, NodeId)> {
    let z = g.linear(x, w, b)?;
    let s = g.relu(z);
    let r = g.add(s, residual)?;
    let out = g.layer_norm(r, gamma, beta, LAYER_NORM_EPS)?;
    Ok((s, out))
}

pub fn forward_structure(structure: Structure, g: &mut Graph<'_>, p: &ParamNodes, h: NodeId) -> Result<NodeOutputs> {
    let domain = |g: &mut Graph<'_>, x, res| block(g, x, res, p.w_d, p.b_d, p.ln_d_gamma, p.ln_d_beta);
    let intent = |g: &mut Graph<'_>, x, res| block(g, x, res, p.w_t, p.b_t, p.ln_t_gamma, p.ln_t_beta);

    let (d, t, s_d, s_t) = match structure {
        Structure::HierDomainFirst => {
            let (s_d, d) = domain(g, h, h)?;
            let x = g.add(d, h)?;
            let (s_t, t) = intent(g, x, d)?;
            (d, t, Some(s_d), Some(s_t))
        }
        Structure::HierIntentFirst => {
            let (s_t, t) = intent(g, h, h)?;
            let x = g.add(t, h)?;
            let (s_d, d) = domain(g, x, t)?;
            (d, t, Some(s_d), Some(s_t))
        }
        Structure::FlatSplit => {
            let (s_d, d) = domain(g, h, h)?;
            let (s_t, t) = intent(g, h, h)?;
            (d, t, Some(s_d), Some(s_t))
        }
        Structure::FlatShared | Structure::SingleHead => (h, h, None, None),
    };
    let logits_domain = if structure.is_joint() {
        Some(g.linear(d, p.head_d_w, p.head_d_b)?)
    } else {
        None
    };
    let logits_intent = g.linear(t, p.head_t_w, p.head_t_b)?;
    Ok(NodeOutputs {
        logits_domain,
        logits_intent,
        d,
        t,
        s_d,
        s_t,
    })
}
