//! Checkpoint container.
//!
//! Layout: the 8-byte magic `PSNTCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header, then every tensor
//! listed in the header as raw little-endian `f32` values, in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BestSnapshot, Checkpoint, EpochRecord, OptimizerKind, OptimizerState, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{DetectionModel, ParamTensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSNTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Group {
    Param,
    Best,
    SgdVelocity,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    group: Group,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BestEntry {
    epoch: usize,
    val_precision_auc: f64,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    kind: OptimizerKind,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
    best: Option<BestEntry>,
    optimizer: OptimizerEntry,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Serializes a checkpoint to bytes; identical checkpoints give identical bytes.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut buffers: Vec<&[f32]> = Vec::new();
    let mut push = |group: Group, p: &ParamTensor, values: &'_ [f32]| {
        entries.push(TensorEntry {
            group,
            name: p.name.clone(),
            shape: p.shape.clone(),
        });
        values.len()
    };
    let params = ckpt.model.params();
    for p in params {
        push(Group::Param, p, &p.values);
        buffers.push(&p.values);
    }
    if let Some(b) = &ckpt.best {
        for p in &b.params {
            push(Group::Best, p, &p.values);
            buffers.push(&p.values);
        }
    }
    let step = match &ckpt.optimizer {
        OptimizerState::Sgd { velocity } => {
            for (p, v) in params.iter().zip(velocity) {
                push(Group::SgdVelocity, p, v);
                buffers.push(v);
            }
            0
        }
        OptimizerState::Adam { step, m, v } => {
            for (p, b) in params.iter().zip(m) {
                push(Group::AdamM, p, b);
                buffers.push(b);
            }
            for (p, b) in params.iter().zip(v) {
                push(Group::AdamV, p, b);
                buffers.push(b);
            }
            *step
        }
    };
    let header = Header {
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        history: ckpt.history.clone(),
        best: ckpt.best.as_ref().map(|b| BestEntry {
            epoch: b.epoch,
            val_precision_auc: b.val_precision_auc,
        }),
        optimizer: OptimizerEntry {
            kind: ckpt.optimizer.kind(),
            step,
        },
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 4 * buffers.iter().map(|b| b.len()).sum::<usize>());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for b in buffers {
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("file truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = u64::from_le_bytes(r.take(8, "header length")?.try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| corrupt("header length overflows"))?;
    let header: Header =
        serde_json::from_slice(r.take(len, "header")?).map_err(|e| corrupt(format!("bad header: {e}")))?;

    let mut groups: Vec<(Group, ParamTensor)> = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n = t
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| corrupt(format!("tensor {} is too large", t.name)))?;
        let raw = r.take(n, &t.name)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        groups.push((
            t.group,
            ParamTensor {
                name: t.name,
                shape: t.shape,
                values,
            },
        ));
    }
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let take = |g: Group| -> Vec<ParamTensor> {
        groups.iter().filter(|(k, _)| *k == g).map(|(_, p)| p.clone()).collect()
    };
    let model_config = header.config.model_config();
    let model = DetectionModel::from_params(model_config.clone(), take(Group::Param))?;
    let n = model.params().len();
    let values = |g: Group| -> Result<Vec<Vec<f32>>> {
        let v: Vec<Vec<f32>> = take(g).into_iter().map(|p| p.values).collect();
        if v.len() != n {
            return Err(corrupt(format!("expected {n} tensors of optimizer state, found {}", v.len())));
        }
        Ok(v)
    };
    let optimizer = match header.optimizer.kind {
        OptimizerKind::Sgd => OptimizerState::Sgd {
            velocity: values(Group::SgdVelocity)?,
        },
        OptimizerKind::Adam => OptimizerState::Adam {
            step: header.optimizer.step,
            m: values(Group::AdamM)?,
            v: values(Group::AdamV)?,
        },
    };
    let best = match header.best {
        Some(b) => {
            let params = take(Group::Best);
            // validates names and shapes against the layout
            DetectionModel::from_params(model_config, params.clone())?;
            Some(BestSnapshot {
                epoch: b.epoch,
                val_precision_auc: b.val_precision_auc,
                params,
            })
        }
        None => None,
    };
    Ok(Checkpoint {
        config: header.config,
        epoch: header.epoch,
        model,
        optimizer,
        history: header.history,
        best,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_checkpoint(&bytes)
}
