//! Model checkpoints: a directory holding `manifest.json` and `weights.bin`.
//!
//! `weights.bin` is the concatenation of every parameter as little-endian
//! `f32`, in inventory order (per rule `w1, b1, w2, b2`, then the selector's
//! `v1, c1, v2, c2`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::{AutomatonModel, ModelSpec};
use crate::numerics::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("weight blob has {found} bytes, manifest declares {expected}")]
    Length { expected: usize, found: usize },
    #[error("corrupt manifest: {0}")]
    Corrupt(String),
    #[error("parameter inventory mismatch: {0}")]
    Inventory(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in `f32` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelSpec,
    pub inventory: Vec<InventoryEntry>,
    pub training_steps: u64,
    pub seed: u64,
    /// Snapshot of the experiment configuration, if any.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

impl Manifest {
    pub fn for_model(model: &AutomatonModel, training_steps: u64, seed: u64) -> Self {
        let mut offset = 0;
        let inventory = model
            .named_tensors()
            .into_iter()
            .map(|(name, t)| {
                let e = InventoryEntry {
                    name,
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        Self {
            format_version: CHECKPOINT_VERSION,
            model: model.spec(),
            inventory,
            training_steps,
            seed,
            config: None,
        }
    }

    pub fn total_elements(&self) -> usize {
        self.inventory
            .iter()
            .map(|e| e.shape.iter().product::<usize>())
            .sum()
    }
}

pub fn weights_to_bytes(model: &AutomatonModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.param_count() * 4);
    for (_, t) in model.named_tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Rebuild a model from a manifest and blob, checking version, inventory and length.
pub fn model_from_parts(manifest: &Manifest, blob: &[u8]) -> Result<AutomatonModel> {
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: manifest.format_version,
            expected: CHECKPOINT_VERSION,
        }
        .into());
    }
    let mut model = AutomatonModel::zeros(&manifest.model)
        .map_err(|e| CheckpointError::Corrupt(format!("model spec: {e}")))?;
    let expected = model.named_tensors();
    if expected.len() != manifest.inventory.len() {
        return Err(CheckpointError::Inventory(format!(
            "{} entries declared, model has {}",
            manifest.inventory.len(),
            expected.len()
        ))
        .into());
    }
    let mut offset = 0;
    for ((name, t), e) in expected.iter().zip(&manifest.inventory) {
        if *name != e.name || t.shape() != e.shape.as_slice() || e.offset != offset {
            return Err(CheckpointError::Inventory(format!(
                "entry {} {:?} @{} does not match {name} {:?} @{offset}",
                e.name,
                e.shape,
                e.offset,
                t.shape()
            ))
            .into());
        }
        offset += t.len();
    }
    if blob.len() != offset * 4 {
        return Err(CheckpointError::Length {
            expected: offset * 4,
            found: blob.len(),
        }
        .into());
    }
    let values: Vec<f32> = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let tensors = expected
        .iter()
        .zip(&manifest.inventory)
        .map(|((_, t), e)| {
            Tensor::from_vec(t.shape(), values[e.offset..e.offset + t.len()].to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    model.load_tensors(&tensors)?;
    Ok(model)
}

pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    model: &AutomatonModel,
    manifest: &Manifest,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, weights_to_bytes(model)).map_err(|e| Error::io(&wpath, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(AutomatonModel, Manifest)> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let wpath = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let model = model_from_parts(&manifest, &blob)?;
    Ok((model, manifest))
}
