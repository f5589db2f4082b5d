//! `ASTN1` tensor container.
//!
//! Layout: the 5 magic bytes `ASTN1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then the raw little-endian value buffers. Header
//! offsets are byte offsets from the start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{AstnError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"ASTN1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode_checkpoint<F: Scalar>(tensors: &[(&str, &Tensor<F>)], meta: serde_json::Value) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
            len: t.len(),
        });
        for &v in t.data() {
            v.write_le(&mut payload);
        }
    }
    let header = CheckpointHeader {
        dtype: F::DTYPE.to_string(),
        tensors: entries,
        meta,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(13 + header.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint<F: Scalar>(path: &Path, tensors: &[(&str, &Tensor<F>)], meta: serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(tensors, meta)?;
    fs::write(path, bytes).map_err(|e| AstnError::io(path, e))
}

/// Decodes a container, converting values to `F` whatever the stored dtype.
pub fn decode_checkpoint<F: Scalar>(
    bytes: &[u8],
    path: &Path,
) -> Result<(Vec<(String, Tensor<F>)>, serde_json::Value)> {
    let bad = |d: &str| AstnError::format("checkpoint", path, d);
    if bytes.len() < 13 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(bad("missing ASTN1 magic"));
    }
    let hlen = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    let body = &bytes[13..];
    if hlen > body.len() {
        return Err(bad("header length exceeds file size"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header json: {e}")))?;
    let payload = &body[hlen..];
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(bad(&format!("unknown dtype {other}"))),
    };
    let mut out = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if e.shape.iter().product::<usize>() != e.len {
            return Err(bad(&format!("tensor {} shape {:?} disagrees with len {}", e.name, e.shape, e.len)));
        }
        let end = e.offset + e.len * width;
        if end > payload.len() {
            return Err(bad(&format!("tensor {} runs past end of payload", e.name)));
        }
        let raw = &payload[e.offset..end];
        let data: Vec<F> = raw
            .chunks_exact(width)
            .map(|c| match width {
                4 => F::from_f64(f32::read_le(c) as f64),
                _ => F::from_f64(f64::read_le(c)),
            })
            .collect();
        out.push((e.name.clone(), Tensor::new(&e.shape, data)?));
    }
    Ok((out, header.meta))
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<(Vec<(String, Tensor<F>)>, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| AstnError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
