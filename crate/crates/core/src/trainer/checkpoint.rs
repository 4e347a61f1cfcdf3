use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::adam::AdamState;
use super::config::TrainConfig;
use crate::datapipe::Vocabulary;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::matching::LossBreakdown;
use crate::model::{ModelConfig, ParamStore, Pdvc};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which learning rate the optimiser state belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Train,
    Finetune,
}

/// Everything needed to run inference or continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stage: Stage,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub adam: AdamState,
    /// Mean loss over each completed epoch.
    pub history: Vec<LossBreakdown>,
    /// Mean total loss of every optimiser step, in order.
    pub batch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the parameter section of the blob.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    stage: Stage,
    vocab: Value,
    tensors: Vec<TensorEntry>,
    adam_step: u64,
    history: Vec<LossBreakdown>,
    batch_losses: Vec<f64>,
}

impl Checkpoint {
    /// Rebuilds the model these parameters belong to.
    pub fn to_model(&self) -> Result<Pdvc> {
        Pdvc::from_params(self.model.clone(), self.params.clone())
    }

    /// Learning rate for further steps in this checkpoint's stage.
    pub fn active_lr(&self) -> f64 {
        match self.stage {
            Stage::Train => self.train.lr,
            Stage::Finetune => self.train.lr_finetune,
        }
    }

    /// Layout: magic, u32 version, u64 header length, JSON header, u64 blob
    /// length, little-endian `f32` blob (parameters, then first moments, then
    /// second moments, each in manifest order), CRC32 of all preceding bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for (name, t) in self.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.numel();
        }
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            stage: self.stage,
            vocab: serde_json::from_str(&self.vocab.to_json_string()).expect("vocabulary json"),
            tensors,
            adam_step: self.adam.step,
            history: self.history.clone(),
            batch_losses: self.batch_losses.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let sections = [self.params.tensors(), &self.adam.m[..], &self.adam.v[..]];
        let blob_len: usize = sections.iter().flat_map(|s| s.iter()).map(|t| 4 * t.numel()).sum();

        let mut out = Vec::with_capacity(4 + 4 + 8 + json.len() + 8 + blob_len + 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(blob_len as u64).to_le_bytes());
        for t in sections.iter().flat_map(|s| s.iter()) {
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses and fully validates a checkpoint; nothing is returned unless
    /// the checksum, version and manifest all check out.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Format("checkpoint is truncated".into());
        if bytes.len() < 4 + 4 + 8 + 8 + 4 {
            return Err(truncated());
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut pos: usize = 8;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= body.len()).ok_or_else(truncated)?;
            let s = &body[pos..end];
            pos = end;
            Ok(s)
        };
        let header_len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(take(header_len)?)?;
        let blob_len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let blob = take(blob_len)?;
        if pos != body.len() {
            return Err(Error::Format("trailing bytes after tensor blob".into()));
        }

        let numel: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        if blob_len != 3 * 4 * numel {
            return Err(Error::Format(format!("blob holds {blob_len} bytes, manifest needs {}", 12 * numel)));
        }
        let floats: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let section = |k: usize| -> Result<Vec<Tensor>> {
            let mut expect = 0;
            header
                .tensors
                .iter()
                .map(|e| {
                    if e.offset != expect {
                        return Err(Error::Format(format!("tensor {} has offset {}, expected {expect}", e.name, e.offset)));
                    }
                    let n: usize = e.shape.iter().product();
                    expect += n;
                    let start = k * numel + e.offset;
                    Tensor::new(e.shape.clone(), floats[start..start + n].to_vec())
                })
                .collect()
        };
        let mut params = ParamStore::new();
        for (e, t) in header.tensors.iter().zip(section(0)?) {
            if params.id(&e.name).is_some() {
                return Err(Error::Format(format!("parameter {} appears twice", e.name)));
            }
            params.add(e.name.clone(), t);
        }
        let vocab = Vocabulary::from_json_str(&header.vocab.to_string())?;
        let ckpt = Checkpoint {
            model: header.model,
            train: header.train,
            stage: header.stage,
            vocab,
            params,
            adam: AdamState {
                step: header.adam_step,
                m: section(1)?,
                v: section(2)?,
            },
            history: header.history,
            batch_losses: header.batch_losses,
        };
        // names and shapes must be exactly those of the declared architecture
        ckpt.to_model()?;
        if ckpt.vocab.len() != ckpt.model.vocab_size {
            return Err(Error::Format("vocabulary size disagrees with the model config".into()));
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
