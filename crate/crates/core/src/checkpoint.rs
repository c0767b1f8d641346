//! `HJM1` checkpoints.
//!
//! Layout (little-endian): `"HJM1"`, `u32` header length, a UTF-8 JSON
//! header, then every tensor listed in the header as raw `f32` values in
//! header order. For hashed encoders only rows that moved away from their
//! seeded initial values are stored, as one `rows x dim` tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabelSpace;
use crate::diffcore::Tensor;
use crate::encoder::{HashEncoder, HashEncoderConfig, Reader};
use crate::model::{Encoder, JointModel, Params, Structure};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"HJM1";
pub const FORMAT_VERSION: u32 = 1;
const TABLE_ROWS: &str = "table_rows";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dims {
    h: usize,
    m: usize,
    n: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum EncoderHeader {
    Hashed {
        buckets: usize,
        dim: usize,
        orders: Vec<usize>,
        seed: u64,
        rows: Vec<u32>,
    },
    External {
        dim: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    structure: Structure,
    dims: Dims,
    encoder: EncoderHeader,
    labels: LabelSpace,
    tensors: Vec<TensorEntry>,
}

/// A trained model with the label space it predicts over.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: JointModel,
    pub labels: LabelSpace,
}

fn fmt_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn new(model: JointModel, labels: LabelSpace) -> Result<Self> {
        if model.num_domains() != labels.num_domains() || model.num_intents() != labels.num_intents() {
            return Err(Error::Data(format!(
                "model predicts {} domains and {} intents, label space has {} and {}",
                model.num_domains(),
                model.num_intents(),
                labels.num_domains(),
                labels.num_intents()
            )));
        }
        Ok(Self { model, labels })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let model = &self.model;
        let mut tensors: Vec<TensorEntry> = Params::NAMES
            .iter()
            .zip(model.params().tensors())
            .map(|(name, t)| TensorEntry {
                name: (*name).to_owned(),
                shape: t.shape().to_vec(),
            })
            .collect();
        let encoder = match model.encoder() {
            Encoder::Hashed(enc) => {
                let rows: Vec<u32> = enc.materialized().map(|(b, _)| b).collect();
                if !rows.is_empty() {
                    tensors.push(TensorEntry {
                        name: TABLE_ROWS.to_owned(),
                        shape: vec![rows.len(), enc.config().dim],
                    });
                }
                EncoderHeader::Hashed {
                    buckets: enc.config().buckets,
                    dim: enc.config().dim,
                    orders: enc.config().orders.clone(),
                    seed: enc.seed(),
                    rows,
                }
            }
            Encoder::External { dim } => EncoderHeader::External { dim: *dim },
        };
        let header = Header {
            format_version: FORMAT_VERSION,
            structure: model.structure(),
            dims: Dims {
                h: model.dim(),
                m: model.num_domains(),
                n: model.num_intents(),
            },
            encoder,
            labels: self.labels.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |vals: &[f64]| {
            for &v in vals {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        };
        for t in model.params().tensors() {
            put(t.data());
        }
        if let Encoder::Hashed(enc) = model.encoder() {
            for (_, row) in enc.materialized() {
                put(row);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(fmt_err(0, "bad magic, expected \"HJM1\""));
        }
        let len = r.u32("header length")? as usize;
        let header_at = r.pos;
        let raw = r.take(len, "header")?;
        let header: Header =
            serde_json::from_slice(raw).map_err(|e| fmt_err(header_at, format!("invalid header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(fmt_err(header_at, format!("unsupported format version {}", header.format_version)));
        }
        header.labels.validate().map_err(|e| fmt_err(header_at, e.to_string()))?;
        let Dims { h, m, n } = header.dims;

        let mut read_tensor = |entry: &TensorEntry| -> Result<Tensor> {
            let count: usize = entry.shape.iter().product();
            let at = r.pos;
            let raw = r.take(count.checked_mul(4).ok_or_else(|| fmt_err(at, "tensor too large"))?, &entry.name)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            Tensor::new(entry.shape.clone(), data).map_err(|e| fmt_err(at, format!("tensor {}: {e}", entry.name)))
        };

        let mut entries = header.tensors.iter();
        let mut dense = Vec::with_capacity(Params::NAMES.len());
        for name in Params::NAMES {
            let entry = entries
                .next()
                .filter(|e| e.name == name)
                .ok_or_else(|| fmt_err(header_at, format!("header must list tensor {name:?} next")))?;
            dense.push(read_tensor(entry)?);
        }
        let params = Params::from_tensors(dense).map_err(|e| fmt_err(header_at, e.to_string()))?;

        let encoder = match header.encoder {
            EncoderHeader::External { dim } => {
                if let Some(extra) = entries.next() {
                    return Err(fmt_err(header_at, format!("unexpected tensor {:?}", extra.name)));
                }
                Encoder::External { dim }
            }
            EncoderHeader::Hashed {
                buckets,
                dim,
                orders,
                seed,
                rows,
            } => {
                let config = HashEncoderConfig { buckets, dim, orders };
                let mut enc = HashEncoder::new(config, seed).map_err(|e| fmt_err(header_at, e.to_string()))?;
                if !rows.is_empty() {
                    let entry = entries
                        .next()
                        .filter(|e| e.name == TABLE_ROWS && e.shape == [rows.len(), dim])
                        .ok_or_else(|| fmt_err(header_at, format!("header must list {TABLE_ROWS} as [{}, {dim}]", rows.len())))?;
                    let table = read_tensor(entry)?;
                    for (bucket, row) in rows.iter().zip(table.data().chunks_exact(dim)) {
                        enc.insert_row(*bucket, row.to_vec()).map_err(|e| fmt_err(header_at, e.to_string()))?;
                    }
                }
                if let Some(extra) = entries.next() {
                    return Err(fmt_err(header_at, format!("unexpected tensor {:?}", extra.name)));
                }
                Encoder::Hashed(enc)
            }
        };
        if r.pos != bytes.len() {
            return Err(fmt_err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = JointModel::from_parts(header.structure, params, encoder).map_err(|e| fmt_err(header_at, e.to_string()))?;
        if (model.dim(), model.num_domains(), model.num_intents()) != (h, m, n) {
            return Err(fmt_err(
                header_at,
                format!("declared dims ({h}, {m}, {n}) disagree with tensor shapes"),
            ));
        }
        Self::new(model, header.labels).map_err(|e| fmt_err(header_at, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
