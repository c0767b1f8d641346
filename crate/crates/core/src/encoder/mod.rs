//! Utterance encoders producing the pooled representation consumed by the
//! model: a trainable hashed n-gram table, or frozen vectors read from an
//! `EMB1` file.

mod hashed;
mod store;

pub use hashed::{fnv1a64, HashEncoder, HashEncoderConfig, NGRAM_SEPARATOR};
pub use store::EmbeddingStore;
pub(crate) use store::Reader;

use crate::{Error, Result};

/// Lowercase alphanumeric tokens of an utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Lowercase, then split on maximal runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Result<TokenSequence> {
    let lower = text.to_lowercase();
    let tokens: Vec<String> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyUtterance(text.to_owned()));
    }
    Ok(TokenSequence(tokens))
}

/// The pooled utterance vector fed to the domain and intent blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector(Vec<f64>);

impl PooledVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericInstability("pooled vector has non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Where pooled vectors come from at inference and training time.
#[derive(Debug, Clone, Copy)]
pub enum Features<'a> {
    Hashed(&'a HashEncoder),
    External(&'a EmbeddingStore),
}

impl Features<'_> {
    pub fn pooled(&self, text: &str) -> Result<PooledVector> {
        match self {
            Features::Hashed(enc) => enc.encode(&tokenize(text)?),
            Features::External(store) => store.lookup(text),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Features::Hashed(enc) => enc.config().dim,
            Features::External(store) => store.dim(),
        }
    }
}
