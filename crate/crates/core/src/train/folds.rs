//! Scene-grouped cross-validation folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::raster::Manifest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    /// Validation patch ids of each fold, in manifest order.
    pub folds: Vec<Vec<String>>,
}

impl FoldSplit {
    pub fn val_ids(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    /// Every id outside `fold`, by fold order.
    pub fn train_ids(&self, fold: usize) -> Vec<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }
}

/// Groups patches by scene (a patch without a scene is its own group),
/// shuffles the groups with `seed` and deals them out, each to the fold
/// currently holding the fewest patches (lowest index on ties). With
/// single-patch groups this is plain round-robin.
pub fn make_folds(manifest: &Manifest, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(arg_err!("need at least 2 folds, got {k}"));
    }
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, r) in manifest.records.iter().enumerate() {
        let key = r.scene_id.clone().unwrap_or_else(|| format!("\u{0}{}", r.patch_id));
        match groups.iter_mut().find(|(g, _)| *g == key) {
            Some((_, v)) => v.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    if k > groups.len() {
        return Err(arg_err!(
            "{k} folds requested but only {} scene groups available",
            groups.len()
        ));
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (_, idx) in groups {
        let target = (0..k).min_by_key(|&f| (members[f].len(), f)).unwrap();
        members[target].extend(idx);
    }
    let folds = members
        .into_iter()
        .map(|mut m| {
            m.sort_unstable();
            m.into_iter().map(|i| manifest.records[i].patch_id.clone()).collect()
        })
        .collect();
    Ok(FoldSplit { k, folds })
}
