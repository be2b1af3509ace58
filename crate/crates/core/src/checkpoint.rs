//! Single-file checkpoints: magic, version, JSON header, then little-endian `f32` payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::numerics::{ParamStore, Tensor};
use crate::training::Adam;
use crate::ttn::{Model, ModelConfig, TtnError};
use crate::vocab::Vocab;

pub const MAGIC: &[u8; 8] = b"TCICCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint file")]
    Magic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] TtnError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    frozen: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MomentEntry {
    param: usize,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct OptimizerHeader {
    betas: (f64, f64),
    eps: f64,
    step: u64,
    slots: usize,
    m: Vec<MomentEntry>,
    v: Vec<MomentEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    run: Value,
    model: ModelConfig,
    relation_tokens: Vec<usize>,
    vocab: Vec<String>,
    xe_steps: u64,
    rl_steps: u64,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
    payload_floats: usize,
}

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// The run configuration this state was produced under.
    pub run: Value,
    pub model: Model<f32>,
    pub vocab: Vocab,
    pub optimizer: Option<Adam>,
    pub xe_steps: u64,
    pub rl_steps: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut payload: Vec<f32> = Vec::with_capacity(self.model.params.num_elements());
        let params = &self.model.params;
        let tensors = (0..params.len())
            .map(|i| {
                let t = params.tensor(i);
                let e = TensorEntry { name: params.name(i).to_string(), shape: t.shape().to_vec(), offset: payload.len(), frozen: params.is_frozen(i) };
                payload.extend_from_slice(t.data());
                e
            })
            .collect();
        let optimizer = self.optimizer.as_ref().map(|opt| {
            let mut moments = |src: &[Vec<f32>]| -> Vec<MomentEntry> {
                src.iter()
                    .enumerate()
                    .filter(|(_, x)| !x.is_empty())
                    .map(|(param, x)| {
                        let e = MomentEntry { param, offset: payload.len(), len: x.len() };
                        payload.extend_from_slice(x);
                        e
                    })
                    .collect()
            };
            let m = moments(&opt.m);
            let v = moments(&opt.v);
            OptimizerHeader { betas: opt.betas, eps: opt.eps, step: opt.step, slots: opt.m.len(), m, v }
        });
        let header = Header {
            version: VERSION,
            run: self.run.clone(),
            model: self.model.config.clone(),
            relation_tokens: self.model.relation_tokens.clone(),
            vocab: self.vocab.words().to_vec(),
            xe_steps: self.xe_steps,
            rl_steps: self.rl_steps,
            tensors,
            optimizer,
            payload_floats: payload.len(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut bytes = Vec::with_capacity(20 + header.len() + 4 * payload.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header);
        for x in &payload {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        fs::File::create(&tmp)?.write_all(&bytes)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let found = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if found != VERSION {
            return Err(CheckpointError::Version { found, expected: VERSION });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| CheckpointError::Corrupt("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.version != VERSION {
            return Err(CheckpointError::Version { found: header.version, expected: VERSION });
        }
        let raw = &bytes[20 + hlen..];
        if raw.len() != 4 * header.payload_floats {
            return Err(CheckpointError::Corrupt(format!("payload has {} bytes, expected {}", raw.len(), 4 * header.payload_floats)));
        }
        let payload: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let slice = |offset: usize, len: usize| {
            payload.get(offset..offset + len).ok_or_else(|| CheckpointError::Corrupt(format!("range {offset}+{len} out of payload")))
        };

        let mut params = ParamStore::new();
        let mut frozen = Vec::new();
        for e in &header.tensors {
            let n = e.shape.iter().product();
            let t = Tensor::new(e.shape.clone(), slice(e.offset, n)?.to_vec()).map_err(|err| CheckpointError::Corrupt(err.to_string()))?;
            let id = params.insert(e.name.clone(), t);
            if e.frozen {
                frozen.push(id);
            }
        }
        for id in frozen {
            params.set_frozen(id, true);
        }
        let model = Model::from_params(header.model, header.relation_tokens, params)?;

        let optimizer = match header.optimizer {
            None => None,
            Some(h) => {
                let mut opt = Adam::new(h.betas);
                opt.eps = h.eps;
                opt.step = h.step;
                opt.m = vec![Vec::new(); h.slots];
                opt.v = vec![Vec::new(); h.slots];
                for (entries, dst) in [(&h.m, &mut opt.m), (&h.v, &mut opt.v)] {
                    for e in entries {
                        let slot = dst.get_mut(e.param).ok_or_else(|| CheckpointError::Corrupt("moment slot out of range".into()))?;
                        *slot = slice(e.offset, e.len)?.to_vec();
                    }
                }
                Some(opt)
            }
        };
        Ok(Checkpoint {
            run: header.run,
            model,
            vocab: Vocab::from_words(header.vocab),
            optimizer,
            xe_steps: header.xe_steps,
            rl_steps: header.rl_steps,
        })
    }
}
