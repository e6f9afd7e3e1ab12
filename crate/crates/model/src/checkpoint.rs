//! Checkpoint directories: `manifest.json` plus little-endian `f32`
//! weights in `weights.bin`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use dualcam_core::io::{bytes_to_f32, f32_to_bytes};

use crate::config::ModelConfig;
use crate::net::DualStreamNet;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_WEIGHTS: &str = "weights.bin";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("checkpoint schema version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("checkpoint does not match the architecture: {0}")]
    Structure(String),
    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements into `weights.bin`.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub iteration: usize,
    pub model: ModelConfig,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(net: &DualStreamNet, dir: &Path, iteration: usize) -> Result<(), CheckpointError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CheckpointError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut params = Vec::new();
    let mut weights: Vec<f32> = Vec::new();
    for (name, var) in net.params().iter() {
        params.push(ParamEntry {
            name: name.to_string(),
            shape: var.dims().to_vec(),
            offset: weights.len(),
        });
        weights.extend(var.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?);
    }
    let manifest = CheckpointManifest {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        iteration,
        model: net.config().clone(),
        params,
    };
    let wpath = dir.join(CHECKPOINT_WEIGHTS);
    fs::write(&wpath, f32_to_bytes(&weights)).map_err(io(&wpath))?;
    let mpath = dir.join(CHECKPOINT_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text).map_err(io(&mpath))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest, CheckpointError> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|source| CheckpointError::Io {
        path: path.clone(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CheckpointError::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let found = value.get("schema_version").and_then(|v| v.as_u64());
    match found {
        Some(v) if v == CHECKPOINT_SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(CheckpointError::SchemaVersion {
                found: v as u32,
                expected: CHECKPOINT_SCHEMA_VERSION,
            })
        }
        None => {
            return Err(CheckpointError::Manifest {
                path,
                reason: "missing schema_version".into(),
            })
        }
    }
    serde_json::from_value(value).map_err(|e| CheckpointError::Manifest {
        path,
        reason: e.to_string(),
    })
}

/// Loads a checkpoint, checking every parameter name and shape against the
/// architecture described by its config.
pub fn load_checkpoint(dir: &Path) -> Result<(DualStreamNet, CheckpointManifest), CheckpointError> {
    let manifest = read_manifest(dir)?;
    manifest
        .model
        .validate()
        .map_err(|e| CheckpointError::Structure(format!("model config: {e}")))?;
    let net = DualStreamNet::new(&manifest.model, 0, DType::F32)?;
    let wpath = dir.join(CHECKPOINT_WEIGHTS);
    let bytes = fs::read(&wpath).map_err(|source| CheckpointError::Io { path: wpath, source })?;
    if bytes.len() % 4 != 0 {
        return Err(CheckpointError::Structure(format!(
            "weights.bin has {} bytes, not a whole number of f32",
            bytes.len()
        )));
    }
    let weights = bytes_to_f32(&bytes);

    let expected: BTreeSet<&str> = net.params().names().collect();
    let found: BTreeSet<&str> = manifest.params.iter().map(|p| p.name.as_str()).collect();
    let missing: Vec<&str> = expected.difference(&found).copied().collect();
    let extra: Vec<&str> = found.difference(&expected).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CheckpointError::Structure(format!(
            "missing parameters {missing:?}, unexpected parameters {extra:?}"
        )));
    }
    for entry in &manifest.params {
        let var = net.params().get(&entry.name).expect("checked above");
        if var.dims() != entry.shape.as_slice() {
            return Err(CheckpointError::Structure(format!(
                "{}: shape {:?}, architecture expects {:?}",
                entry.name,
                entry.shape,
                var.dims()
            )));
        }
        let n = var.elem_count();
        let end = entry.offset.checked_add(n).filter(|&e| e <= weights.len()).ok_or_else(|| {
            CheckpointError::Structure(format!("{}: weights.bin too short", entry.name))
        })?;
        let values: Vec<f64> = weights[entry.offset..end].iter().map(|&v| v as f64).collect();
        net.params().set_values(&entry.name, &values)?;
    }
    Ok((net, manifest))
}
