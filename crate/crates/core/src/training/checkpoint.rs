//! Checkpoint files: JSON header, then named little-endian `f64` blocks in
//! declaration order (parameters, optionally Adam moments, then the epoch
//! record), with a CRC over header and payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::{EpochRow, TrainError};
use crate::format::{self, CrcScope, FormatError, PayloadReader, PayloadWriter};
use crate::neuralops::{Architecture, Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TDCRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Values per stored epoch row: loss, relative error, learning rate, seconds.
const ROW_WIDTH: usize = 4;

/// Model, optional optimizer state and training progress.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamState>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub record: Vec<EpochRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    architecture: Architecture,
    model: ModelConfig,
    num_params: usize,
    seed: u64,
    epoch: usize,
    has_optimizer: bool,
    adam: Option<AdamConfig>,
    adam_step: u64,
    record_len: usize,
    blocks: Vec<BlockEntry>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>, TrainError> {
    let model = &ckpt.model;
    let mut blocks: Vec<BlockEntry> = model
        .layout()
        .blocks()
        .iter()
        .map(|b| BlockEntry {
            name: b.name.clone(),
            shape: b.shape.clone(),
        })
        .collect();
    if ckpt.optimizer.is_some() {
        for prefix in ["adam.m", "adam.v"] {
            for b in model.layout().blocks() {
                blocks.push(BlockEntry {
                    name: format!("{prefix}.{}", b.name),
                    shape: b.shape.clone(),
                });
            }
        }
    }
    blocks.push(BlockEntry {
        name: "record".into(),
        shape: vec![ckpt.record.len(), ROW_WIDTH],
    });
    let header = Header {
        version: CHECKPOINT_VERSION,
        architecture: model.architecture(),
        model: model.config.clone(),
        num_params: model.num_params(),
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        has_optimizer: ckpt.optimizer.is_some(),
        adam: ckpt.optimizer.as_ref().map(|s| s.config),
        adam_step: ckpt.optimizer.as_ref().map_or(0, |s| s.t),
        record_len: ckpt.record.len(),
        blocks,
    };
    let header = serde_json::to_vec(&header).map_err(|e| FormatError::Header(e.to_string()))?;
    let n = model.num_params();
    let mut payload = PayloadWriter::with_capacity(8 * (3 * n + ROW_WIDTH * ckpt.record.len()));
    payload.put_f64s(&model.params);
    if let Some(state) = &ckpt.optimizer {
        if state.m.len() != n || state.v.len() != n {
            return Err(TrainError::Checkpoint(
                "optimizer state does not match the model".into(),
            ));
        }
        payload.put_f64s(&state.m);
        payload.put_f64s(&state.v);
    }
    for row in &ckpt.record {
        payload.put_f64s(&[row.loss, row.rel_l2, row.lr, row.seconds]);
    }
    Ok(format::encode(
        CHECKPOINT_MAGIC,
        &header,
        &payload.into_bytes(),
        CrcScope::HeaderAndPayload,
    ))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    let (header, payload) = format::decode(bytes, CHECKPOINT_MAGIC, CrcScope::HeaderAndPayload)?;
    let header: Header = serde_json::from_slice(header).map_err(|e| FormatError::Header(e.to_string()))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(FormatError::Version {
            expected: CHECKPOINT_VERSION,
            found: header.version,
        }
        .into());
    }
    if header.architecture != header.model.architecture {
        return Err(FormatError::Inconsistent("architecture tag disagrees with model configuration".into()).into());
    }
    // Rebuild the layout and check that the stored block table matches it.
    let skeleton = Model::with_params(&header.model, vec![0.0; header.num_params])
        .map_err(|e| FormatError::Inconsistent(format!("model configuration: {e}")))?;
    let layout = skeleton.layout().blocks();
    let mut expected: Vec<(String, Vec<usize>)> = layout.iter().map(|b| (b.name.clone(), b.shape.clone())).collect();
    if header.has_optimizer {
        for prefix in ["adam.m", "adam.v"] {
            expected.extend(layout.iter().map(|b| (format!("{prefix}.{}", b.name), b.shape.clone())));
        }
    }
    expected.push(("record".into(), vec![header.record_len, ROW_WIDTH]));
    let stored: Vec<(String, Vec<usize>)> = header.blocks.into_iter().map(|b| (b.name, b.shape)).collect();
    if stored != expected {
        return Err(FormatError::Inconsistent("parameter block table does not match the architecture".into()).into());
    }

    let n = header.num_params;
    let mut reader = PayloadReader::new(payload);
    let params = reader.f64s(n, "parameters")?;
    let optimizer = if header.has_optimizer {
        let config = header
            .adam
            .ok_or_else(|| FormatError::Inconsistent("optimizer state without hyperparameters".into()))?;
        let m = reader.f64s(n, "adam.m")?;
        let v = reader.f64s(n, "adam.v")?;
        Some(AdamState {
            config,
            m,
            v,
            t: header.adam_step,
        })
    } else {
        None
    };
    let raw = reader.f64s(header.record_len * ROW_WIDTH, "record")?;
    reader.finish()?;
    let record = raw
        .chunks_exact(ROW_WIDTH)
        .enumerate()
        .map(|(epoch, r)| EpochRow {
            epoch,
            loss: r[0],
            rel_l2: r[1],
            lr: r[2],
            seconds: r[3],
        })
        .collect();
    let model = Model::with_params(&header.model, params)?;
    Ok(Checkpoint {
        model,
        optimizer,
        epoch: header.epoch,
        seed: header.seed,
        record,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    format::atomic_write(path, &encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = std::fs::read(path).map_err(FormatError::Io)?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and rejects it unless it holds `expected`'s architecture.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint, TrainError> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.model.config != expected {
        return Err(TrainError::Checkpoint(format!(
            "checkpoint holds a {} model with a different configuration than the requested {}",
            ckpt.model.architecture(),
            expected.architecture
        )));
    }
    Ok(ckpt)
}
