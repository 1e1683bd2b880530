//! Checkpoints: a JSON manifest plus a little-endian `f64` blob next to it
//! (same path, `.bin` extension).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::numcore::Matrix;
use crate::util::write_atomic;

use super::{Mode, ModelConfig, ModelError, Seq2SeqModel, TrainingConfig};

const FORMAT: &str = "attnguide-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub offset: u64,
    pub byte_length: u64,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub mode: Mode,
    pub model: ModelConfig,
    pub training: Option<TrainingConfig>,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

fn blob_path(path: &Path) -> PathBuf {
    path.with_extension("bin")
}

/// Writes manifest and blob. `training` is echoed into the manifest.
pub fn save_checkpoint(model: &Seq2SeqModel, path: &Path, training: Option<&TrainingConfig>) -> Result<(), ModelError> {
    let mut blob = Vec::with_capacity(model.params.entry_count() * 8);
    let mut tensors = Vec::with_capacity(model.params.len());
    for (_, p) in model.params.iter() {
        let offset = blob.len() as u64;
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: [p.value.rows(), p.value.cols()],
            dtype: "f64".into(),
            offset,
            byte_length: blob.len() as u64 - offset,
            frozen: p.frozen,
        });
    }
    let bp = blob_path(path);
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: VERSION,
        mode: model.mode,
        model: model.config,
        training: training.cloned(),
        blob: bp.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
        tensors,
    };
    write_atomic(&bp, &blob)?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_atomic(path, json.as_bytes())?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<CheckpointManifest, ModelError> {
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported format {} v{}", manifest.format, manifest.version)));
    }
    Ok(manifest)
}

/// Loads a checkpoint, validating every tensor against the architecture
/// implied by the manifest's model config.
pub fn load_checkpoint(path: &Path) -> Result<(Seq2SeqModel, CheckpointManifest), ModelError> {
    let manifest = read_manifest(path)?;
    let blob = fs::read(path.with_file_name(&manifest.blob))?;
    let mut model = Seq2SeqModel::empty(manifest.model, manifest.mode);
    if manifest.tensors.len() != model.params.len() {
        return Err(ModelError::Checkpoint(format!(
            "manifest lists {} tensors, architecture has {}",
            manifest.tensors.len(),
            model.params.len()
        )));
    }
    for entry in &manifest.tensors {
        let id = model
            .params
            .find(&entry.name)
            .ok_or_else(|| ModelError::Checkpoint(format!("unexpected tensor {}", entry.name)))?;
        let p = model.params.get_mut(id);
        let [rows, cols] = entry.shape;
        if p.value.shape() != (rows, cols) || entry.dtype != "f64" || entry.byte_length != (rows * cols * 8) as u64 {
            return Err(ModelError::Checkpoint(format!("tensor {} has shape {:?}, expected {:?}", entry.name, entry.shape, p.value.shape())));
        }
        let start = entry.offset as usize;
        let bytes = blob
            .get(start..start + entry.byte_length as usize)
            .ok_or_else(|| ModelError::Checkpoint(format!("blob too short for {}", entry.name)))?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        p.value = Matrix::from_vec(rows, cols, data).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        p.frozen = entry.frozen;
    }
    Ok((model, manifest))
}
