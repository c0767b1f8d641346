use std::path::Path;

use indexmap::IndexMap;

use super::PooledVector;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";

/// Frozen utterance vectors keyed by exact utterance text.
///
/// On-disk layout (little-endian): `"EMB1"`, `u32` record count, `u32`
/// dimension, then per record a `u32` byte length, the UTF-8 text and
/// `dimension` `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    map: IndexMap<String, Vec<f32>>,
    duplicates: usize,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            map: IndexMap::new(),
            duplicates: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Number of records that replaced an earlier record with the same text.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn insert(&mut self, text: impl Into<String>, values: Vec<f32>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::dim(
                "embedding store",
                format!("vector of {} values, store dimension is {}", values.len(), self.dim),
            ));
        }
        if self.map.insert(text.into(), values).is_some() {
            self.duplicates += 1;
        }
        Ok(())
    }

    pub fn get(&self, text: &str) -> Option<&[f32]> {
        self.map.get(text).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Exact-match lookup; there is no fallback for unseen text.
    pub fn lookup(&self, text: &str) -> Result<PooledVector> {
        match self.map.get(text) {
            Some(v) => PooledVector::new(v.iter().map(|&x| f64::from(x)).collect()),
            None => Err(Error::Coverage {
                count: 1,
                first: vec![text.to_owned()],
            }),
        }
    }

    /// Texts absent from the store, in input order, without repeats.
    pub fn missing<'t>(&self, texts: impl IntoIterator<Item = &'t str>) -> Vec<&'t str> {
        let mut seen = std::collections::HashSet::new();
        texts
            .into_iter()
            .filter(|t| !self.map.contains_key(*t) && seen.insert(*t))
            .collect()
    }

    pub fn check_coverage<'t>(&self, texts: impl IntoIterator<Item = &'t str>) -> Result<()> {
        let missing = self.missing(texts);
        if missing.is_empty() {
            return Ok(());
        }
        Err(Error::Coverage {
            count: missing.len(),
            first: missing.iter().take(5).map(|s| (*s).to_owned()).collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.map.len() * (4 + 32 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.map.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (text, values) in &self.map {
            out.extend_from_slice(&(text.len() as u32).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad magic {magic:?}, expected \"EMB1\""),
            });
        }
        let count = r.u32("record count")? as usize;
        let dim_at = r.pos;
        let dim = r.u32("dimension")? as usize;
        if dim == 0 {
            return Err(Error::Format {
                offset: dim_at as u64,
                reason: "dimension is 0".into(),
            });
        }
        let mut store = Self::new(dim)?;
        for i in 0..count {
            let len = r.u32("text length")? as usize;
            let at = r.pos;
            let raw = r.take(len, "text")?;
            let text = std::str::from_utf8(raw).map_err(|e| Error::Format {
                offset: at as u64,
                reason: format!("record {i} text is not UTF-8: {e}"),
            })?;
            let vals = r.take(4 * dim, "vector")?;
            let values = vals.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            store.insert(text, values)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                reason: format!("{} trailing bytes after {count} records", bytes.len() - r.pos),
            });
        }
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Bounds-checked little-endian cursor reporting byte offsets on failure.
pub(crate) struct Reader<'b> {
    pub bytes: &'b [u8],
    pub pos: usize,
}

impl<'b> Reader<'b> {
    pub fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                offset: self.pos as u64,
                reason: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            }),
        }
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
