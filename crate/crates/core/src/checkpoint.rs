//! Versioned binary checkpoints.
//!
//! File layout: magic `"PLM3"`, format version (`u32` little-endian),
//! header length (`u64` little-endian), a UTF-8 JSON header holding the
//! model config, ponder settings, and a tensor manifest (name → shape +
//! byte offset into the payload region), then contiguous little-endian
//! `f32` tensor payloads in manifest order. The manifest follows the
//! canonical parameter traversal order and offsets are relative to the
//! start of the payload region.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, PonderSettings};
use crate::error::{CoreError, Result};
use crate::params::Parameters;
use crate::real::Real;

pub const MAGIC: [u8; 4] = *b"PLM3";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 2],
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    ponder: PonderSettings,
    manifest: Vec<ManifestEntry>,
}

/// A loaded checkpoint: configs plus single-precision parameters.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub ponder: PonderSettings,
    pub params: Parameters<f32>,
}

/// Writes `params` (cast to `f32`) with its configs to `path`.
pub fn save_checkpoint<F: Real>(
    params: &Parameters<F>,
    config: &ModelConfig,
    ponder: &PonderSettings,
    path: &Path,
) -> Result<()> {
    let mut manifest = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    params.visit(|name, tensor| {
        let (rows, cols) = tensor.dim();
        manifest.push(ManifestEntry {
            name: name.to_string(),
            shape: [rows, cols],
            offset: payload.len() as u64,
        });
        for v in tensor.iter() {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    });
    let header = Header {
        model: config.clone(),
        ponder: ponder.clone(),
        manifest,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| CoreError::Checkpoint(format!("header serialization: {e}")))?;

    let mut file = fs::File::create(path)?;
    file.write_all(&MAGIC)?;
    file.write_all(&FORMAT_VERSION.to_le_bytes())?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    file.write_all(&payload)?;
    file.flush()?;
    Ok(())
}

/// Reads a checkpoint from `path`. When `requested_max_steps` is given it
/// must equal the stored ponder budget, otherwise the load is refused.
pub fn load_checkpoint(path: &Path, requested_max_steps: Option<usize>) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(CoreError::Checkpoint(format!(
            "file is {} bytes, smaller than the fixed preamble",
            bytes.len()
        )));
    }
    if bytes[0..4] != MAGIC {
        return Err(CoreError::Checkpoint(format!(
            "bad magic {:02x?}, expected {:02x?} (\"PLM3\")",
            &bytes[0..4],
            MAGIC
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16usize.checked_add(header_len).ok_or_else(|| {
        CoreError::Checkpoint(format!("header length {header_len} overflows"))
    })?;
    if payload_start > bytes.len() {
        return Err(CoreError::Checkpoint(format!(
            "declared header of {header_len} bytes exceeds the file"
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| CoreError::Checkpoint(format!("header parse: {e}")))?;
    header.model.validate()?;
    header.ponder.validate()?;
    if let Some(k) = requested_max_steps {
        if k != header.ponder.max_steps {
            return Err(CoreError::Config(format!(
                "checkpoint stores a ponder budget of {} steps but {k} was requested",
                header.ponder.max_steps
            )));
        }
    }

    let payload = &bytes[payload_start..];
    let mut running = 0u64;
    let mut tensors: Vec<(String, Array2<f32>)> = Vec::with_capacity(header.manifest.len());
    for entry in &header.manifest {
        if entry.offset != running {
            return Err(CoreError::Checkpoint(format!(
                "manifest offset {} for tensor `{}` is not contiguous (expected {running})",
                entry.offset, entry.name
            )));
        }
        let n_values = entry.shape[0] * entry.shape[1];
        let n_bytes = n_values * 4;
        let start = entry.offset as usize;
        let end = start + n_bytes;
        if end > payload.len() {
            return Err(CoreError::Checkpoint(format!(
                "truncated payload for tensor `{}`: needs bytes {start}..{end} of {}",
                entry.name,
                payload.len()
            )));
        }
        let values: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), values)
            .map_err(|e| CoreError::Checkpoint(format!("tensor `{}`: {e}", entry.name)))?;
        tensors.push((entry.name.clone(), tensor));
        running = end as u64;
    }
    if (running as usize) != payload.len() {
        return Err(CoreError::Checkpoint(format!(
            "{} trailing payload bytes beyond the manifest",
            payload.len() - running as usize
        )));
    }

    // Materialize parameters with the config's shapes, then require the
    // manifest to cover each tensor exactly once with a matching shape.
    let mut params = Parameters::<f32>::init(&header.model, &header.ponder)?;
    let mut lookup: std::collections::HashMap<String, Array2<f32>> =
        std::collections::HashMap::with_capacity(tensors.len());
    for (name, tensor) in tensors {
        if lookup.insert(name.clone(), tensor).is_some() {
            return Err(CoreError::Checkpoint(format!(
                "tensor `{name}` appears twice in the manifest"
            )));
        }
    }
    let mut missing: Option<String> = None;
    let mut mismatched: Option<String> = None;
    params.visit_mut(|name, tensor| {
        match lookup.remove(name) {
            Some(loaded) if loaded.dim() == tensor.dim() => *tensor = loaded,
            Some(loaded) => {
                mismatched.get_or_insert_with(|| {
                    format!(
                        "tensor `{name}` has shape {:?} but the config implies {:?}",
                        loaded.dim(),
                        tensor.dim()
                    )
                });
            }
            None => {
                missing.get_or_insert_with(|| format!("tensor `{name}` missing from manifest"));
            }
        }
    });
    if let Some(msg) = mismatched {
        return Err(CoreError::Checkpoint(msg));
    }
    if let Some(msg) = missing {
        return Err(CoreError::Checkpoint(msg));
    }
    if let Some(extra) = lookup.keys().next() {
        return Err(CoreError::Checkpoint(format!(
            "manifest contains unknown tensor `{extra}`"
        )));
    }

    Ok(Checkpoint {
        config: header.model,
        ponder: header.ponder,
        params,
    })
}
