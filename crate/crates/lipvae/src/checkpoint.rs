//! Checkpoint files: one line of JSON metadata followed by a block of
//! little-endian `f64` values.
//!
//! The payload holds the model parameters (encoder mean, encoder std if
//! learned, decoder; each layer as weight then bias) and, for training
//! checkpoints, the Adam first and second moments. A SHA-256 digest of the
//! payload is stored in the header.

use std::path::Path;

use lipvae_core::lipnet::LipschitzMlp;
use lipvae_core::numerics::SeededRng;
use lipvae_core::train::{Adam, AdamConfig, EpochAccumulator, EpochStats, TrainConfig, TrainState};
use lipvae_core::vae::{StdEncoder, VaeConfig, VaeModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_VERSION: &str = "lipvae-ckpt-1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint format {found:?} (expected {FORMAT_VERSION:?})")]
    Version { found: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint I/O on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] lipvae_core::Error),
}

/// A model plus, optionally, the optimizer state to resume training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: VaeModel,
    pub training: Option<TrainingRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub config: TrainConfig,
    pub state: TrainState,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainingHeader {
    config: TrainConfig,
    adam: AdamConfig,
    adam_step: u64,
    epoch: usize,
    step: usize,
    partial: EpochAccumulator,
    history: Vec<EpochStats>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    model: VaeConfig,
    tensors: Vec<TensorEntry>,
    training: Option<TrainingHeader>,
    payload_values: usize,
    sha256: String,
}

fn tensor_manifest(model: &VaeModel) -> Vec<TensorEntry> {
    let mut out = Vec::new();
    let mut push = |prefix: &str, net: &LipschitzMlp| {
        for (i, l) in net.layers().iter().enumerate() {
            out.push(TensorEntry {
                name: format!("{prefix}.{i}.weight"),
                shape: vec![l.out_dim(), l.in_dim()],
            });
            out.push(TensorEntry {
                name: format!("{prefix}.{i}.bias"),
                shape: vec![l.out_dim()],
            });
        }
    };
    push("encoder_mean", model.encoder_mean());
    if let StdEncoder::Learned(n) = model.encoder_std() {
        push("encoder_std", n);
    }
    push("decoder", model.decoder());
    if let Some(s) = &model.config().fixed_sigma {
        out.push(TensorEntry {
            name: "fixed_sigma (header only)".into(),
            shape: vec![s.len()],
        });
    }
    out
}

fn digest(payload: &[u8]) -> String {
    hex::encode(Sha256::digest(payload))
}

/// Serializes a checkpoint to bytes.
pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut values = ckpt.model.params_flat();
    let training = ckpt.training.as_ref().map(|t| {
        values.extend_from_slice(&t.state.adam.m);
        values.extend_from_slice(&t.state.adam.v);
        TrainingHeader {
            config: t.config,
            adam: t.state.adam.config,
            adam_step: t.state.adam.t,
            epoch: t.state.epoch,
            step: t.state.step,
            partial: t.state.partial,
            history: t.state.history.clone(),
        }
    });
    let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = Header {
        format: FORMAT_VERSION.into(),
        model: ckpt.model.config().clone(),
        tensors: tensor_manifest(&ckpt.model),
        training,
        payload_values: values.len(),
        sha256: digest(&payload),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&payload);
    out
}

/// Parses a checkpoint, verifying format version and payload digest.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::Corrupt("missing header line".into()))?;
    let raw: serde_json::Value =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    let found = raw.get("format").and_then(|f| f.as_str()).unwrap_or("");
    if found != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: found.into() });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    let payload = &bytes[nl + 1..];
    if payload.len() != header.payload_values * 8 {
        return Err(CheckpointError::Corrupt(format!(
            "payload is {} bytes, header promises {}",
            payload.len(),
            header.payload_values * 8
        )));
    }
    if digest(payload) != header.sha256 {
        return Err(CheckpointError::Corrupt("payload digest mismatch".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut model = VaeModel::new(header.model, &SeededRng::new(0))?;
    let n = model.num_params();
    let expected = n + header.training.as_ref().map_or(0, |_| 2 * n);
    if values.len() != expected {
        return Err(CheckpointError::Corrupt(format!(
            "{} payload values, architecture needs {expected}",
            values.len()
        )));
    }
    model.set_params_flat(&values[..n])?;
    let training = header.training.map(|t| TrainingRecord {
        config: t.config,
        state: TrainState {
            adam: Adam {
                config: t.adam,
                m: values[n..2 * n].to_vec(),
                v: values[2 * n..].to_vec(),
                t: t.adam_step,
            },
            epoch: t.epoch,
            step: t.step,
            partial: t.partial,
            history: t.history,
        },
    });
    Ok(Checkpoint { model, training })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(ckpt)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}
