//! Binary checkpoint: magic, format version, JSON header, little-endian
//! `f64` tensor data, then a SHA-256 of everything before it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LmError, ModelConfig, ModelParams};
use crate::autodiff::Tensor;

const MAGIC: &[u8; 8] = b"EDCOCKPT";
const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    version: u64,
    tensors: Vec<(String, Vec<usize>)>,
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), LmError> {
    let header = Header {
        config: params.config.clone(),
        version: params.version,
        tensors: params
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), t.shape().to_vec()))
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| LmError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(24 + header.len() + params.num_params() * 8 + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for t in params.tensors.values() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf)?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> LmError {
    LmError::Checkpoint(msg.into())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, LmError> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(corrupt("missing checkpoint magic"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let format = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if format != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {format}")));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let data_start = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length out of range"))?;
    let header: Header =
        serde_json::from_slice(&body[20..data_start]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let mut data = &body[data_start..];
    let mut tensors = BTreeMap::new();
    for (name, shape) in header.tensors {
        let n: usize = shape.iter().product();
        if data.len() < n * 8 {
            return Err(corrupt(format!("truncated data for tensor {name}")));
        }
        let (chunk, rest) = data.split_at(n * 8);
        data = rest;
        let values = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, values).map_err(|e| corrupt(e.to_string()))?;
        tensors.insert(name, t);
    }
    if !data.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", data.len())));
    }
    ModelParams::from_tensors(header.config, tensors, header.version)
}

/// Loads a checkpoint and rejects it unless its vocabulary has `expected_vocab` entries.
pub fn load_checkpoint_checked(path: &Path, expected_vocab: usize) -> Result<ModelParams, LmError> {
    let params = load_checkpoint(path)?;
    if params.config.vocab_size != expected_vocab {
        return Err(LmError::VocabMismatch {
            found: params.config.vocab_size,
            expected: expected_vocab,
        });
    }
    Ok(params)
}
