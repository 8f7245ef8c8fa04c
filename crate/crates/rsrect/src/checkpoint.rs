//! Network weight checkpoints.
//!
//! Layout: `"RSCK"`, a little-endian `u32` header length, a JSON header
//! `{format_version, r, seed, tensors: [{name, shape, trainable}]}`, then
//! every tensor as little-endian `f32` in header order. Batch-norm running
//! statistics are stored alongside the trainable tensors.

use std::fs;
use std::path::Path;

use rsrect_core::nn::{ModelParams, Param};
use rsrect_core::Real;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RSCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub r: usize,
    /// Seed the weights were initialized from.
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub seed: u64,
    pub model: ModelParams<T>,
}

pub fn checkpoint_to_bytes<T: Real>(model: &ModelParams<T>, seed: u64) -> Vec<u8> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        r: model.r(),
        seed,
        tensors: model
            .params()
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                trainable: p.trainable,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let payload: usize = model.params().iter().map(|p| p.data.len()).sum();
    let mut out = Vec::with_capacity(8 + json.len() + 4 * payload);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in &p.data {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

/// Parses only the header (cheap size checks before loading weights).
pub fn read_header(bytes: &[u8], path: &Path) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let end = 8usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(path, "truncated checkpoint header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[8..end]).map_err(|e| Error::format(path, e))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {}", header.format_version),
        ));
    }
    Ok((header, end))
}

pub fn checkpoint_from_bytes<T: Real>(bytes: &[u8], path: &Path) -> Result<Checkpoint<T>> {
    let (header, mut at) = read_header(bytes, path)?;
    let mut params = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let end = at + 4 * n;
        let chunk = bytes.get(at..end).ok_or_else(|| {
            Error::format(path, format!("payload truncated in tensor `{}`", t.name))
        })?;
        let data = chunk
            .chunks_exact(4)
            .map(|c| T::of(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect();
        params.push(Param {
            name: t.name,
            shape: t.shape,
            data,
            trainable: t.trainable,
        });
        at = end;
    }
    if at != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing payload bytes", bytes.len() - at),
        ));
    }
    let model = ModelParams::from_params(header.r, params).map_err(|e| Error::format(path, e))?;
    Ok(Checkpoint {
        seed: header.seed,
        model,
    })
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &ModelParams<T>, seed: u64) -> Result<()> {
    fs::write(path, checkpoint_to_bytes(model, seed)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, path)
}
