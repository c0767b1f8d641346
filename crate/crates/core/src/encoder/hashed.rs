use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PooledVector, TokenSequence};
use crate::diffcore::{Graph, NodeId};
use crate::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Byte placed between tokens of a multi-token n-gram before hashing.
pub const NGRAM_SEPARATOR: u8 = b' ';

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashEncoderConfig {
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_orders")]
    pub orders: Vec<usize>,
}

fn default_buckets() -> usize {
    1 << 18
}
fn default_dim() -> usize {
    256
}
fn default_orders() -> Vec<usize> {
    vec![1, 2]
}

impl Default for HashEncoderConfig {
    fn default() -> Self {
        Self {
            buckets: default_buckets(),
            dim: default_dim(),
            orders: default_orders(),
        }
    }
}

impl HashEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buckets < 2 || !self.buckets.is_power_of_two() {
            return Err(Error::Config(format!("bucket count {} must be a power of two >= 2", self.buckets)));
        }
        if self.buckets > 1 << 32 {
            return Err(Error::Config(format!("bucket count {} exceeds 2^32", self.buckets)));
        }
        if self.dim == 0 {
            return Err(Error::Config("encoder dimension must be positive".into()));
        }
        if self.orders.is_empty() || self.orders.contains(&0) {
            return Err(Error::Config(format!("n-gram orders {:?} must be non-empty and positive", self.orders)));
        }
        Ok(())
    }
}

/// Trainable `buckets x dim` embedding table indexed by hashed n-grams.
///
/// Rows are materialized on first write; an untouched row is regenerated
/// from `(seed, bucket)` so the logical table never has to be allocated in
/// full. Generated values are `f32`-representable, which keeps checkpoints
/// exact for rows that were never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct HashEncoder {
    config: HashEncoderConfig,
    seed: u64,
    rows: BTreeMap<u32, Vec<f64>>,
}

impl HashEncoder {
    pub fn new(config: HashEncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut orders = config.orders.clone();
        orders.sort_unstable();
        orders.dedup();
        Ok(Self {
            config: HashEncoderConfig { orders, ..config },
            seed,
            rows: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &HashEncoderConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Bucket ids of every configured n-gram: all order-1 ids left to right,
    /// then order-2, and so on.
    pub fn ngram_ids(&self, tokens: &TokenSequence) -> Vec<u32> {
        let toks = tokens.tokens();
        let mut ids = Vec::new();
        let mut buf = Vec::new();
        for &k in &self.config.orders {
            for span in toks.windows(k) {
                buf.clear();
                for (i, t) in span.iter().enumerate() {
                    if i > 0 {
                        buf.push(NGRAM_SEPARATOR);
                    }
                    buf.extend_from_slice(t.as_bytes());
                }
                ids.push((fnv1a64(&buf) % self.config.buckets as u64) as u32);
            }
        }
        ids
    }

    fn init_row(&self, bucket: u32) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::from(bucket));
        let bound = 1.0 / (self.config.dim as f32).sqrt();
        (0..self.config.dim).map(|_| f64::from(rng.gen_range(-bound..=bound))).collect()
    }

    pub fn row(&self, bucket: u32) -> Cow<'_, [f64]> {
        match self.rows.get(&bucket) {
            Some(r) => Cow::Borrowed(r),
            None => Cow::Owned(self.init_row(bucket)),
        }
    }

    pub fn row_mut(&mut self, bucket: u32) -> &mut [f64] {
        if !self.rows.contains_key(&bucket) {
            let init = self.init_row(bucket);
            self.rows.insert(bucket, init);
        }
        self.rows.get_mut(&bucket).expect("row just inserted")
    }

    /// Rows that differ from (or were written over) their generated initial values.
    pub fn materialized(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.rows.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn materialized_len(&self) -> usize {
        self.rows.len()
    }

    pub(crate) fn insert_row(&mut self, bucket: u32, values: Vec<f64>) -> Result<()> {
        if bucket as usize >= self.config.buckets || values.len() != self.config.dim {
            return Err(Error::dim("hash table", format!("row {bucket} with {} values", values.len())));
        }
        self.rows.insert(bucket, values);
        Ok(())
    }

    pub(crate) fn round_to_f32(&mut self) {
        for row in self.rows.values_mut() {
            row.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Mean of the table rows selected by [`Self::ngram_ids`].
    pub fn encode(&self, tokens: &TokenSequence) -> Result<PooledVector> {
        let ids = self.ngram_ids(tokens);
        if ids.is_empty() {
            return Err(Error::EmptySequence("encode"));
        }
        let mut acc = vec![0.0; self.config.dim];
        for &id in &ids {
            for (a, v) in acc.iter_mut().zip(self.row(id).iter()) {
                *a += v;
            }
        }
        let k = ids.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        PooledVector::new(acc)
    }

    /// Graph version of [`Self::encode`]. Row leaves are shared through
    /// `leaves` so a bucket used by several utterances in one batch
    /// accumulates a single gradient.
    pub fn encode_nodes<'a>(
        &'a self,
        g: &mut Graph<'a>,
        tokens: &TokenSequence,
        leaves: &mut BTreeMap<u32, NodeId>,
        trainable: bool,
    ) -> Result<NodeId> {
        let ids = self.ngram_ids(tokens);
        let nodes: Vec<NodeId> = ids
            .iter()
            .map(|&id| *leaves.entry(id).or_insert_with(|| g.vector(self.row(id), trainable)))
            .collect();
        g.mean_pool(&nodes).map_err(|e| match e {
            Error::EmptySequence(_) => Error::EmptySequence("encode"),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, Tensor};
    use crate::encoder::tokenize;

    fn small(orders: Vec<usize>) -> HashEncoder {
        HashEncoder::new(HashEncoderConfig { buckets: 64, dim: 4, orders }, 7).unwrap()
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn ngram_ids_count_and_range() {
        let enc = small(vec![1, 2]);
        let t = tokenize("a b c").unwrap();
        let ids = enc.ngram_ids(&t);
        assert_eq!(ids.len(), 5);
        assert!(ids.iter().all(|&i| (i as usize) < 64));
        assert_eq!(ids, enc.ngram_ids(&t));
        assert_eq!(ids[0], (fnv1a64(b"a") % 64) as u32);
        assert_eq!(ids[3], (fnv1a64(b"a b") % 64) as u32);
        assert_eq!(ids[4], (fnv1a64(b"b c") % 64) as u32);
    }

    #[test]
    fn config_validation() {
        let bad = |b, d, o: Vec<usize>| HashEncoder::new(HashEncoderConfig { buckets: b, dim: d, orders: o }, 0).is_err();
        assert!(bad(1, 4, vec![1]));
        assert!(bad(48, 4, vec![1]));
        assert!(bad(64, 0, vec![1]));
        assert!(bad(64, 4, vec![]));
        assert!(bad(64, 4, vec![0]));
        assert!(!bad(2, 1, vec![1]));
    }

    #[test]
    fn encode_single_unigram_is_its_row() {
        let enc = small(vec![1]);
        let t = tokenize("hello").unwrap();
        let id = enc.ngram_ids(&t)[0];
        assert_eq!(enc.encode(&t).unwrap().values(), &*enc.row(id));
    }

    #[test]
    fn encode_zero_table_is_zero() {
        let mut enc = small(vec![1, 2]);
        for b in 0..64 {
            enc.row_mut(b).iter_mut().for_each(|v| *v = 0.0);
        }
        let v = enc.encode(&tokenize("some words here").unwrap()).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn init_is_bounded_and_deterministic() {
        let enc = small(vec![1]);
        let r = enc.row(5);
        assert!(r.iter().all(|v| v.abs() <= 0.5));
        assert_eq!(r, small(vec![1]).row(5));
        assert_ne!(enc.row(5), enc.row(6));
        assert!(r.iter().all(|&v| v as f32 as f64 == v));
    }

    #[test]
    fn order_without_enough_tokens_is_empty() {
        let enc = small(vec![2]);
        assert!(matches!(enc.encode(&tokenize("one").unwrap()), Err(Error::EmptySequence(_))));
    }

    #[test]
    fn encode_gradient_matches_finite_differences() {
        let enc = small(vec![1, 2]);
        let toks = tokenize("book a flight to paris").unwrap();
        let mut ids = enc.ngram_ids(&toks);
        let order = ids.clone();
        ids.sort_unstable();
        ids.dedup();
        let mut point: Vec<Tensor> = ids.iter().map(|&b| Tensor::vector(enc.row(b).into_owned())).collect();
        point.push(Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
        point.push(Tensor::vector(vec![0.1, -0.2, 0.3]));
        let err = grad_check(&point, |g, nodes| {
            let rows: Vec<NodeId> = order.iter().map(|b| nodes[ids.binary_search(b).unwrap()]).collect();
            let h = g.mean_pool(&rows)?;
            let l = g.linear(h, nodes[nodes.len() - 2], nodes[nodes.len() - 1])?;
            g.softmax_xent(l, 2)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn encode_nodes_matches_encode() {
        let enc = small(vec![1, 2]);
        let toks = tokenize("the the cat").unwrap();
        let mut g = Graph::new();
        let mut leaves = BTreeMap::new();
        let h = enc.encode_nodes(&mut g, &toks, &mut leaves, true).unwrap();
        assert_eq!(g.value(h), enc.encode(&toks).unwrap().values());
        // "the" appears twice but shares one leaf
        let distinct: std::collections::BTreeSet<u32> = enc.ngram_ids(&toks).into_iter().collect();
        assert_eq!(leaves.len(), distinct.len());
        assert!(leaves.len() < 5);
    }
}
