//! Parameter checkpoints: a magic tag, a JSON header and concatenated raw arrays.
//!
//! Layout: `b"MEDMUSCK"`, format version (`u32` LE), header length (`u64` LE),
//! UTF-8 JSON header, then every tensor's values little-endian in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::array::{Shape, Tensor};
use super::scalar::Scalar;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MEDMUSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    /// Free-form metadata, e.g. the model configuration.
    pub meta: serde_json::Value,
}

pub fn encode_checkpoint<T: Scalar>(tensors: &[(String, &Tensor<T>)], meta: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        dtype: T::DTYPE.into(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape(),
            })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

fn decode_values<S: Scalar, T: Scalar>(bytes: &[u8]) -> Vec<T> {
    bytes
        .chunks_exact(S::BYTES)
        .map(|c| T::from_f64(S::read_le(c).to_f64()))
        .collect()
}

/// Decode a checkpoint, converting stored values to `T` if the dtype differs.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8], path: &Path) -> Result<(CheckpointHeader, Vec<Tensor<T>>)> {
    let bad = |reason: &str| Error::Format {
        path: path.to_owned(),
        reason: reason.to_owned(),
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(bad(&format!("unknown dtype {other}"))),
    };
    let mut offset = 20 + hlen;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let chunk = bytes
            .get(offset..offset + n * width)
            .ok_or_else(|| bad(&format!("truncated data for {}", e.name)))?;
        offset += n * width;
        let values = if width == 4 {
            decode_values::<f32, T>(chunk)
        } else {
            decode_values::<f64, T>(chunk)
        };
        tensors.push(Tensor::from_vec(e.shape, values)?);
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok((header, tensors))
}

pub fn write_checkpoint<T: Scalar>(path: &Path, tensors: &[(String, &Tensor<T>)], meta: serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(tensors, meta)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<(CheckpointHeader, Vec<Tensor<T>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
