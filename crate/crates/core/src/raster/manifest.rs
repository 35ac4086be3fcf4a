//! JSON-lines dataset manifests. Relative paths resolve against the
//! manifest's own directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_line;
use crate::error::{Error, Result};

use super::image::{CloudMask, MultiBandPatch};
use super::tensor::load_tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub patch_id: String,
    pub scene_id: Option<String>,
    pub band_paths: Vec<String>,
    pub mask_path: Option<String>,
    pub grid_row: usize,
    pub grid_col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Self {
        Self {
            root: root.into(),
            records,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
            records.push(rec);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, records })
    }

    /// Writes canonical JSON-lines. Paths are stored as given.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for r in &self.records {
            text.push_str(&to_canonical_line(r)?);
            text.push('\n');
        }
        super::write_atomic(path, text.as_bytes())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn find(&self, patch_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.patch_id == patch_id)
    }

    /// Keeps only the records whose ids are listed, in listed order.
    pub fn subset(&self, ids: &[String]) -> Result<Manifest> {
        let records = ids
            .iter()
            .map(|id| {
                self.find(id)
                    .cloned()
                    .ok_or_else(|| Error::Consistency(format!("patch {id} not in manifest")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Manifest {
            root: self.root.clone(),
            records,
        })
    }

    /// Splits off the last `n_scenes` distinct scenes (in order of first
    /// appearance) as a held-out set. Records without a scene count as their
    /// own scene.
    pub fn split_holdout(&self, n_scenes: usize) -> (Manifest, Manifest) {
        let mut scenes: Vec<String> = Vec::new();
        for r in &self.records {
            let key = r.scene_id.clone().unwrap_or_else(|| r.patch_id.clone());
            if !scenes.contains(&key) {
                scenes.push(key);
            }
        }
        let cut = scenes.len().saturating_sub(n_scenes);
        let held: Vec<&String> = scenes[cut..].iter().collect();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for r in &self.records {
            let key = r.scene_id.clone().unwrap_or_else(|| r.patch_id.clone());
            if held.contains(&&key) {
                test.push(r.clone());
            } else {
                train.push(r.clone());
            }
        }
        (
            Manifest::new(self.root.clone(), train),
            Manifest::new(self.root.clone(), test),
        )
    }
}

pub fn load_patch(manifest: &Manifest, rec: &ManifestRecord) -> Result<MultiBandPatch> {
    let mut planes = Vec::with_capacity(rec.band_paths.len());
    let mut shape = None;
    for p in &rec.band_paths {
        let path = manifest.resolve(p);
        let t = load_tensor(&path)?;
        let dims = super::image::plane_dims(&t).map_err(|_| {
            Error::Consistency(format!("{}: band is not a 2-D plane", path.display()))
        })?;
        match shape {
            None => shape = Some(dims),
            Some(s) if s != dims => {
                return Err(Error::Consistency(format!(
                    "patch {}: band shapes {s:?} and {dims:?} differ",
                    rec.patch_id
                )))
            }
            _ => {}
        }
        planes.push(t.to_f32());
    }
    let (h, w) = shape
        .ok_or_else(|| Error::Consistency(format!("patch {} has no bands", rec.patch_id)))?;
    MultiBandPatch::from_planes(rec.patch_id.clone(), rec.scene_id.clone(), h, w, planes)
}

pub fn load_mask(manifest: &Manifest, rec: &ManifestRecord) -> Result<Option<CloudMask>> {
    match &rec.mask_path {
        None => Ok(None),
        Some(p) => {
            let t = load_tensor(&manifest.resolve(p))?;
            CloudMask::from_tensor(&t)
                .map(Some)
                .map_err(|e| Error::Consistency(format!("patch {}: {e}", rec.patch_id)))
        }
    }
}
