//! Joint loss, AdamW with a warmup schedule, early stopping and the
//! deterministic training loop.

mod early_stop;
mod loss;
mod optim;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use early_stop::{EarlyStopping, Observation, StopReason};
pub use loss::{joint_loss, lambda_value};
pub use optim::{adamw_step, lr_schedule, AdamState, AdamWConfig};

use crate::data::{Dataset, LabelSpace, LabeledExample};
use crate::diffcore::{Graph, NodeId};
use crate::encoder::{tokenize, EmbeddingStore, Features, HashEncoder, HashEncoderConfig, TokenSequence};
use crate::evaluation::argmax;
use crate::model::{Encoder, JointModel, Params, Structure};
use crate::{Error, Result};

pub const BUILTIN_LEARNING_RATE: f64 = 1e-3;
pub const EXTERNAL_LEARNING_RATE: f64 = 4e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_proportion: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub structure: Structure,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: BUILTIN_LEARNING_RATE,
            warmup_proportion: 0.1,
            max_epochs: 10,
            patience: 3,
            batch_size: 32,
            weight_decay: 0.01,
            seed: 42,
            structure: Structure::HierDomainFirst,
        }
    }
}

impl TrainConfig {
    /// Defaults for training on precomputed embeddings.
    pub fn external() -> Self {
        Self {
            learning_rate: EXTERNAL_LEARNING_RATE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.warmup_proportion) {
            return Err(Error::Config(format!(
                "warmup_proportion must be in [0, 1), got {}",
                self.warmup_proportion
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// Where training inputs come from.
#[derive(Debug, Clone, Copy)]
pub enum Inputs<'a> {
    /// Learn a hashed n-gram table from scratch.
    Builtin(&'a HashEncoderConfig),
    /// Frozen vectors looked up by utterance text.
    External(&'a EmbeddingStore),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub lambda: f64,
    pub valid_intent_accuracy: f64,
    pub valid_domain_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_valid_intent_accuracy: f64,
}

/// splitmix64 over `seed` and a stream index, so each consumer of
/// randomness gets its own independent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) enum Input {
    Tokens(TokenSequence),
    Vector(Vec<f64>),
}

pub(crate) fn prepare(examples: &[LabeledExample], inputs: Inputs<'_>) -> Result<Vec<Input>> {
    examples
        .iter()
        .map(|ex| match inputs {
            Inputs::Builtin(_) => tokenize(&ex.text).map(Input::Tokens),
            Inputs::External(store) => store.lookup(&ex.text).map(|v| Input::Vector(v.into_inner())),
        })
        .collect()
}

/// Summed loss and gradients of one mini-batch. The graph loss is the batch
/// mean, so gradients are those of the mean.
pub(crate) struct BatchGrads {
    pub loss_sum: f64,
    pub dense: Vec<Option<Vec<f64>>>,
    pub rows: BTreeMap<u32, Vec<f64>>,
}

pub(crate) fn batch_gradients(model: &JointModel, batch: &[(&Input, &LabeledExample)]) -> Result<BatchGrads> {
    let mut g = Graph::new();
    let p = model.param_nodes(&mut g, true);
    let mut leaves: BTreeMap<u32, NodeId> = BTreeMap::new();
    let mut losses = Vec::with_capacity(batch.len());
    let mut loss_sum = 0.0;
    for (input, ex) in batch {
        let h = match (input, model.encoder()) {
            (Input::Tokens(tokens), Encoder::Hashed(enc)) => enc.encode_nodes(&mut g, tokens, &mut leaves, true)?,
            (Input::Vector(v), Encoder::External { .. }) => g.vector(v.as_slice(), false),
            _ => return Err(Error::Config("training inputs do not match the model encoder".into())),
        };
        let out = model.forward_nodes(&mut g, &p, h)?;
        let l = joint_loss(&mut g, &out, ex.domain, ex.intent, p.lambda_raw)?;
        loss_sum += g.value(l)[0];
        losses.push(l);
    }
    let mean = g.mean_pool(&losses)?;
    let mut grads = g.backward(mean)?;
    let dense = p.to_array().iter().map(|&id| grads.take(id)).collect();
    let rows = leaves.into_iter().filter_map(|(b, id)| grads.take(id).map(|gr| (b, gr))).collect();
    Ok(BatchGrads { loss_sum, dense, rows })
}

/// AdamW over the dense parameters plus lazily updated table rows. A row
/// is only touched on steps where it received a gradient, and keeps its own
/// step count for bias correction.
pub(crate) struct Optimizer {
    cfg: AdamWConfig,
    dense: Vec<(AdamState, u64)>,
    rows: BTreeMap<u32, (AdamState, u64)>,
}

impl Optimizer {
    pub fn new(model: &JointModel, weight_decay: f64) -> Self {
        Self {
            cfg: AdamWConfig {
                weight_decay,
                ..AdamWConfig::default()
            },
            dense: model.params().tensors().iter().map(|t| (AdamState::new(t.len()), 0)).collect(),
            rows: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, model: &mut JointModel, grads: &BatchGrads, lr: f64) -> Result<()> {
        let (params, encoder) = model.params_and_encoder_mut();
        for (i, (t, grad)) in params.tensors_mut().into_iter().zip(&grads.dense).enumerate() {
            // parameters the structure never reads get no gradient and no decay
            let Some(grad) = grad else { continue };
            let (state, step) = &mut self.dense[i];
            *step += 1;
            adamw_step(t.data_mut(), grad, state, *step, lr, &self.cfg, Params::decays(i))
                .map_err(|e| annotate(e, Params::NAMES[i]))?;
        }
        if let Encoder::Hashed(enc) = encoder {
            let dim = enc.config().dim;
            for (&bucket, grad) in &grads.rows {
                let (state, step) = self.rows.entry(bucket).or_insert_with(|| (AdamState::new(dim), 0));
                *step += 1;
                adamw_step(enc.row_mut(bucket), grad, state, *step, lr, &self.cfg, true)
                    .map_err(|e| annotate(e, &format!("table row {bucket}")))?;
            }
        }
        Ok(())
    }
}

fn annotate(e: Error, what: &str) -> Error {
    match e {
        Error::NumericInstability(m) => Error::NumericInstability(format!("{what}: {m}")),
        other => other,
    }
}

fn check_split(name: &str, examples: &[LabeledExample], labels: &LabelSpace) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Data(format!("{name} split is empty")));
    }
    examples.iter().try_for_each(|ex| labels.check(ex))
}

/// Train a model and return the snapshot with the best validation intent
/// accuracy, rounded to checkpoint precision.
pub fn train(
    dataset: &Dataset,
    labels: &LabelSpace,
    config: &TrainConfig,
    inputs: Inputs<'_>,
) -> Result<(JointModel, TrainHistory)> {
    config.validate()?;
    check_split("train", &dataset.train, labels)?;
    check_split("valid", &dataset.valid, labels)?;

    let encoder = match inputs {
        Inputs::Builtin(cfg) => Encoder::Hashed(HashEncoder::new(cfg.clone(), derive_seed(config.seed, 1))?),
        Inputs::External(store) => {
            let texts = dataset.train.iter().chain(&dataset.valid).map(|e| e.text.as_str());
            store.check_coverage(texts)?;
            Encoder::External { dim: store.dim() }
        }
    };
    let mut model = JointModel::new(
        config.structure,
        labels.num_domains(),
        labels.num_intents(),
        encoder,
        derive_seed(config.seed, 0),
    )?;
    let prepared = prepare(&dataset.train, inputs)?;
    let mut optimizer = Optimizer::new(&model, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));

    let n = dataset.train.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.max_epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut stopper = EarlyStopping::new(config.patience, config.max_epochs);
    let mut epochs = Vec::new();
    let mut best: Option<JointModel> = None;
    let mut step = 0usize;

    let stop_reason = loop {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&Input, &LabeledExample)> = chunk.iter().map(|&i| (&prepared[i], &dataset.train[i])).collect();
            let grads = batch_gradients(&model, &batch)?;
            loss_sum += grads.loss_sum;
            step += 1;
            let lr = lr_schedule(step, total_steps, config.learning_rate, config.warmup_proportion)?;
            optimizer.apply(&mut model, &grads, lr)?;
        }
        let features = match (inputs, model.encoder()) {
            (Inputs::External(store), _) => Features::External(store),
            (_, Encoder::Hashed(enc)) => Features::Hashed(enc),
            _ => unreachable!("builtin inputs always build a hashed encoder"),
        };
        let (valid_intent, valid_domain) = split_accuracy(&model, features, &dataset.valid, labels)?;
        let record = EpochRecord {
            epoch: epochs.len() + 1,
            train_loss: loss_sum / n as f64,
            lambda: model.lambda(),
            valid_intent_accuracy: valid_intent,
            valid_domain_accuracy: valid_domain,
        };
        if !record.train_loss.is_finite() {
            return Err(Error::NumericInstability(format!("epoch {} train loss is {}", record.epoch, record.train_loss)));
        }
        epochs.push(record);
        let obs = stopper.observe(valid_intent);
        if obs.improved {
            let mut snapshot = model.clone();
            snapshot.round_to_f32();
            best = Some(snapshot);
        }
        if let Some(reason) = obs.stop {
            break reason;
        }
    };

    let history = TrainHistory {
        epochs,
        stop_reason,
        best_epoch: stopper.best_epoch().expect("at least one epoch"),
        best_valid_intent_accuracy: stopper.best_score().expect("at least one epoch"),
    };
    Ok((best.expect("first epoch always improves"), history))
}

/// Argmax intent and domain accuracy without thresholding. For the
/// intent-only model the domain is the one the predicted intent maps to.
pub fn split_accuracy(
    model: &JointModel,
    features: Features<'_>,
    examples: &[LabeledExample],
    labels: &LabelSpace,
) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::Data("cannot score an empty split".into()));
    }
    let (mut intent_ok, mut domain_ok) = (0usize, 0usize);
    for ex in examples {
        let out = model.forward(&features.pooled(&ex.text)?)?;
        let intent = argmax(&out.p_intent);
        let domain = match &out.p_domain {
            Some(p) => argmax(p),
            None => labels.domain_of(intent),
        };
        intent_ok += usize::from(intent == ex.intent);
        domain_ok += usize::from(domain == ex.domain);
    }
    let n = examples.len() as f64;
    Ok((intent_ok as f64 / n, domain_ok as f64 / n))
}
