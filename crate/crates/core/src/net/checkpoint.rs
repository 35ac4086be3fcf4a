//! Model checkpoints: one CSEG tensor per parameter plus an `index.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical::{read_json, write_canonical};
use crate::error::{Error, Result};
use crate::raster::{load_tensor, save_tensor, Tensor, TensorData};

use super::arch::{Architecture, LayerKind};
use super::model::UNetModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub config_hash: String,
    pub architecture: Architecture,
    pub tensors: Vec<TensorEntry>,
}

fn param_dims(arch: &Architecture) -> Vec<Vec<usize>> {
    arch.layers()
        .into_iter()
        .flat_map(|l| {
            let w = match l.kind {
                LayerKind::Conv3x3 { .. } => vec![l.cout, l.cin, 3, 3],
                LayerKind::UpConv2x2 => vec![l.cin, l.cout, 2, 2],
                LayerKind::Conv1x1 => vec![l.cout, l.cin, 1, 1],
                LayerKind::InstanceNorm => vec![l.cout],
            };
            [w, vec![l.cout]]
        })
        .collect()
}

pub fn save_checkpoint(model: &UNetModel<f32>, config_hash: &str, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let arch = model.architecture().clone();
    let mut tensors = Vec::new();
    for ((name, dims), values) in model
        .param_names()
        .into_iter()
        .zip(param_dims(&arch))
        .zip(model.param_slices())
    {
        let file = format!("{name}.cseg");
        let t = Tensor::new(dims.clone(), TensorData::F32(values.to_vec()))?;
        save_tensor(&t, &dir.join(&file))?;
        tensors.push(TensorEntry { name, file, dims });
    }
    let index = CheckpointIndex {
        config_hash: config_hash.to_string(),
        architecture: arch,
        tensors,
    };
    write_canonical(&dir.join("index.json"), &index)
}

/// Loads a checkpoint; when `expected_hash` is given it must match.
pub fn load_checkpoint(dir: &Path, expected_hash: Option<&str>) -> Result<(UNetModel<f32>, CheckpointIndex)> {
    let index: CheckpointIndex = read_json(&dir.join("index.json"))?;
    if let Some(h) = expected_hash {
        if h != index.config_hash {
            return Err(Error::Consistency(format!(
                "{}: checkpoint config hash {} does not match {h}",
                dir.display(),
                index.config_hash
            )));
        }
    }
    let mut model = UNetModel::<f32>::zeros(index.architecture.clone());
    let names = model.param_names();
    if names.len() != index.tensors.len() {
        return Err(Error::Consistency(format!(
            "{}: index lists {} tensors, architecture has {}",
            dir.display(),
            index.tensors.len(),
            names.len()
        )));
    }
    for ((slot, name), entry) in model.param_slices_mut().into_iter().zip(&names).zip(&index.tensors) {
        if &entry.name != name {
            return Err(Error::Consistency(format!("tensor {} where {name} expected", entry.name)));
        }
        let t = load_tensor(&dir.join(&entry.file))?;
        match t.data() {
            TensorData::F32(v) if v.len() == slot.len() => slot.copy_from_slice(v),
            _ => {
                return Err(Error::Consistency(format!(
                    "tensor {name} has wrong dtype or size"
                )))
            }
        }
    }
    Ok((model, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = UNetModel::<f32>::init(Architecture::new(2, vec![4, 8]), 11);
        save_checkpoint(&m, "abc", dir.path()).unwrap();
        let (back, index) = load_checkpoint(dir.path(), Some("abc")).unwrap();
        assert_eq!(back, m);
        assert_eq!(index.tensors[0].dims, vec![4, 2, 3, 3]);
        assert!(load_checkpoint(dir.path(), Some("other")).is_err());
    }
}
