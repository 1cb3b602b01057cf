//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"CHATCAPS" | u32 version | u64 header length | JSON header
//! | f64 parameter data, in header order
//! | f64 Adam first moments, then second moments (if the header has an optimizer)
//! | SHA-256 of every preceding byte
//! ```
//!
//! Floats are stored as raw bits, so a save/load round trip is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::Vocab;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::{default_groups, validate_groups, Adam, AdamState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CHATCAPS";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Where a training run stands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Optimizer steps taken.
    pub step: u64,
    /// Epoch the next batch belongs to.
    pub epoch: u64,
    /// Index of the next batch within that epoch.
    pub batch: usize,
    pub best_f1: Option<f64>,
    pub best_step: Option<u64>,
}

impl Progress {
    pub fn start() -> Self {
        Progress {
            step: 0,
            epoch: 0,
            batch: 0,
            best_f1: None,
            best_step: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    /// Learning rate per group name.
    lr: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    code_version: String,
    config: ModelConfig,
    vocab: Vec<String>,
    params: Vec<ParamEntry>,
    optimizer: Option<OptimizerHeader>,
    progress: Option<Progress>,
    run: Option<serde_json::Value>,
}

/// Everything a checkpoint restores.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<Adam>,
    pub progress: Option<Progress>,
    /// Echo of the run configuration that wrote the file.
    pub run: Option<serde_json::Value>,
}

pub fn to_bytes(
    model: &Model,
    optimizer: Option<&Adam>,
    progress: Option<&Progress>,
    run: Option<&serde_json::Value>,
) -> Result<Vec<u8>> {
    let store = model.params();
    if let Some(opt) = optimizer {
        opt.state.check_compatible(store)?;
    }
    let header = Header {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: model.config().clone(),
        vocab: model.vocab().tokens().to_vec(),
        params: store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        optimizer: optimizer.map(|o| OptimizerHeader {
            t: o.state.t,
            beta1: o.state.beta1,
            beta2: o.state.beta2,
            eps: o.state.eps,
            lr: o.groups.iter().map(|g| (g.name.clone(), g.lr)).collect(),
        }),
        progress: progress.cloned(),
        run: run.cloned(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(json.len() + 8 * 3 * store.num_scalars() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |xs: &[f64]| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    for (_, p) in store.iter() {
        put(p.value.data());
    }
    if let Some(opt) = optimizer {
        for m in &opt.state.m {
            put(m);
        }
        for v in &opt.state.v {
            put(v);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let json = r.take(usize::try_from(len).map_err(|_| Error::Format("header too large".into()))?)?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

    let mut values = Vec::with_capacity(header.params.len());
    for p in &header.params {
        let data = r.f64s(p.shape.iter().product())?;
        values.push((p.name.clone(), Tensor::new(p.shape.clone(), data)?));
    }
    let vocab = Vocab::from_tokens(&header.vocab);
    if vocab.tokens() != header.vocab.as_slice() {
        return Err(Error::Format("checkpoint vocabulary is malformed".into()));
    }
    let mut model = Model::new(header.config, vocab, None)?;
    model.params_mut().load_values(values)?;

    let optimizer = match header.optimizer {
        None => None,
        Some(h) => {
            let store = model.params();
            let mut m = Vec::with_capacity(store.len());
            let mut v = Vec::with_capacity(store.len());
            for (_, p) in store.iter() {
                m.push(r.f64s(p.value.numel())?);
            }
            for (_, p) in store.iter() {
                v.push(r.f64s(p.value.numel())?);
            }
            let mut groups = default_groups(store, 1.0, 1.0);
            groups.retain(|g| !g.params.is_empty());
            for g in &mut groups {
                g.lr = *h.lr.get(&g.name).ok_or_else(|| {
                    Error::Format(format!("checkpoint lacks a rate for group {}", g.name))
                })?;
            }
            validate_groups(&groups, store)?;
            Some(Adam {
                groups,
                state: AdamState {
                    m,
                    v,
                    t: h.t,
                    beta1: h.beta1,
                    beta2: h.beta2,
                    eps: h.eps,
                },
            })
        }
    };
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after checkpoint data".into()));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        progress: header.progress,
        run: header.run,
    })
}

/// Writes through a temporary file and renames, so readers never see a
/// partial checkpoint.
pub fn save(
    path: &Path,
    model: &Model,
    optimizer: Option<&Adam>,
    progress: Option<&Progress>,
    run: Option<&serde_json::Value>,
) -> Result<()> {
    let bytes = to_bytes(model, optimizer, progress, run)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
