//! Versioned weights container.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic, the ASCII bytes "STDWGT\0\0"
//! 8       4     u32 format version, currently 1
//! 12      4     u32 manifest length in bytes
//! 16      M     manifest, UTF-8 JSON (see below)
//! 16+M    ...   payload: for each manifest tensor in order, numel
//!               consecutive 32-bit IEEE-754 floats, little-endian
//! ```
//!
//! The manifest is a JSON document:
//!
//! ```text
//! {"version":1,
//!  "config":{...model hyperparameters...},
//!  "tensors":[{"name":"backbone.stem.conv.weight","shape":[8,3,3,3],
//!              "dtype":"f32","kind":"param"}, ...]}
//! ```
//!
//! `kind` is "param" for trainable tensors and "buffer" for batch-norm
//! running statistics. Entry order in the manifest fixes payload order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imageio::write_atomic;
use crate::{CoreError, Result};

use super::{StdConfig, StdModel};

const MAGIC: &[u8; 8] = b"STDWGT\0\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    kind: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: StdConfig,
    tensors: Vec<TensorEntry>,
}

fn model_entries(model: &StdModel) -> (Vec<TensorEntry>, Vec<Vec<f64>>) {
    let mut entries = Vec::new();
    let mut values = Vec::new();
    for p in model.parameters() {
        let shape = p.tensor.shape();
        entries.push(TensorEntry {
            name: p.name,
            shape: vec![shape.n(), shape.c(), shape.h(), shape.w()],
            dtype: "f32".into(),
            kind: "param".into(),
        });
        values.push(p.tensor.data().clone());
    }
    for b in model.buffers() {
        let data = b.data.borrow().clone();
        entries.push(TensorEntry {
            name: b.name,
            shape: vec![data.len()],
            dtype: "f32".into(),
            kind: "buffer".into(),
        });
        values.push(data);
    }
    (entries, values)
}

/// Serialize the model (hyperparameters, parameters, buffers) to bytes.
pub fn encode_weights(model: &StdModel) -> Vec<u8> {
    let (tensors, values) = model_entries(model);
    let manifest = Manifest { version: FORMAT_VERSION, config: model.config.clone(), tensors };
    let manifest_bytes = serde_json::to_vec(&manifest).expect("manifest serializes");
    let payload: usize = values.iter().map(|v| 4 * v.len()).sum();
    let mut out = Vec::with_capacity(16 + manifest_bytes.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for v in values {
        for x in v {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

/// Write the model to `path` atomically.
pub fn save_weights(model: &StdModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_weights(model))
}

fn format_err(detail: &str) -> CoreError {
    CoreError::Format(format!("weights container: {detail}"))
}

/// Decode a weights container and rebuild the model it describes.
pub fn decode_weights(bytes: &[u8]) -> Result<StdModel> {
    if bytes.len() < 16 {
        return Err(format_err("truncated header"));
    }
    if &bytes[0..8] != MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format_err(&format!("unsupported version {version}")));
    }
    let mlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let manifest_end = 16usize.checked_add(mlen).ok_or_else(|| format_err("manifest length overflow"))?;
    if bytes.len() < manifest_end {
        return Err(format_err("truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..manifest_end])
        .map_err(|e| format_err(&format!("manifest parse: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(format_err("manifest version mismatch"));
    }

    let model = StdModel::new(&manifest.config, 0);
    let (expected, _) = model_entries(&model);
    if expected.len() != manifest.tensors.len() {
        return Err(format_err(&format!(
            "tensor count mismatch: file has {}, model needs {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }

    let mut offset = manifest_end;
    let params = model.parameters();
    let buffers = model.buffers();
    let mut params_by_name: std::collections::HashMap<&str, &crate::tensor::Tensor> =
        params.iter().map(|p| (p.name.as_str(), &p.tensor)).collect();
    for (want, got) in expected.iter().zip(&manifest.tensors) {
        if want.name != got.name || want.shape != got.shape || want.kind != got.kind {
            return Err(format_err(&format!(
                "tensor mismatch: expected {} {:?} ({}), found {} {:?} ({})",
                want.name, want.shape, want.kind, got.name, got.shape, got.kind
            )));
        }
        if got.dtype != "f32" {
            return Err(format_err(&format!("unsupported dtype {}", got.dtype)));
        }
        let numel: usize = got.shape.iter().product();
        let end = offset + 4 * numel;
        if bytes.len() < end {
            return Err(format_err("truncated payload"));
        }
        let data: Vec<f64> = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        offset = end;
        if got.kind == "param" {
            let tensor = params_by_name.remove(got.name.as_str()).expect("entry order matches");
            tensor.data_mut().copy_from_slice(&data);
        } else {
            let buf = buffers.iter().find(|b| b.name == got.name).expect("entry order matches");
            buf.data.borrow_mut().copy_from_slice(&data);
        }
    }
    if offset != bytes.len() {
        return Err(format_err("trailing bytes after payload"));
    }
    Ok(model)
}

/// Load a model from a weights container on disk.
pub fn load_weights(path: &Path) -> Result<StdModel> {
    let bytes = std::fs::read(path)?;
    decode_weights(&bytes)
}
