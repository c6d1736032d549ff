//! Checkpoints: a JSON manifest mapping each parameter name to its shape and
//! element offset, plus a flat little-endian f64 file in manifest order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "model.json";
pub const DATA_FILE: &str = "model.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f64 elements into the data file.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelSpec,
    pub data_file: String,
    pub parameters: Vec<CheckpointEntry>,
    /// Caller-provided metadata (scalers, mask threshold, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(model: &Model, dir: &Path, extra: serde_json::Value) -> Result<CheckpointManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::with_capacity(model.params().scalar_count() * 8);
    let mut parameters = Vec::with_capacity(model.params().len());
    let mut offset = 0;
    for p in model.params().iter() {
        parameters.push(CheckpointEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset,
        });
        offset += p.tensor.len();
        for v in p.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        model: model.spec(),
        data_file: DATA_FILE.to_string(),
        parameters,
        extra,
    };
    let bin = dir.join(DATA_FILE);
    std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(MANIFEST_FILE);
    std::fs::write(&json, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&json, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointManifest)> {
    let json = dir.join(MANIFEST_FILE);
    let text = std::fs::read(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&text)?;
    let bin = dir.join(&manifest.data_file);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Data(format!("{} is not a whole number of f64 values", bin.display())));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    // values are overwritten below; the seed only fixes the construction path
    let mut model = Model::build(&manifest.model, &mut ChaCha8Rng::seed_from_u64(0))?;
    if model.params().len() != manifest.parameters.len() {
        return Err(Error::Data(format!(
            "checkpoint lists {} parameters, model has {}",
            manifest.parameters.len(),
            model.params().len()
        )));
    }
    let mut values = Vec::with_capacity(manifest.parameters.len());
    for (entry, p) in manifest.parameters.iter().zip(model.params().iter()) {
        if entry.name != p.name {
            return Err(Error::Data(format!("checkpoint parameter `{}` where `{}` expected", entry.name, p.name)));
        }
        let len: usize = entry.shape.iter().product();
        let data = flat
            .get(entry.offset..entry.offset + len)
            .ok_or_else(|| Error::Data(format!("parameter `{}` runs past the data file", entry.name)))?;
        values.push(Tensor::new(entry.shape.clone(), data.to_vec())?);
    }
    model.params_mut().load_values(&values)?;
    Ok((model, manifest))
}
