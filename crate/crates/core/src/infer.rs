//! Patch and scene inference, fold ensembling and binarization.

use std::path::Path;

use rayon::prelude::*;

use crate::autoconfig::PipelineConfig;
use crate::error::{arg_err, Error, Result};
use crate::net::{batch_from_patches, load_checkpoint, Act, UNetModel};
use crate::raster::{split_scene, stitch_scene, Blend, CloudMask, MultiBandPatch, ProbabilityMap};

/// Cloud-channel softmax of each sample in a logit batch.
pub fn cloud_probabilities(logits: &Act<f32>) -> Result<Vec<ProbabilityMap>> {
    if logits.c != 2 {
        return Err(arg_err!("expected 2 logit channels, got {}", logits.c));
    }
    let plane = logits.plane();
    (0..logits.n)
        .map(|i| {
            let s = logits.sample(i);
            let p = (0..plane)
                .map(|j| {
                    let d = (s[plane + j] - s[j]) as f64;
                    (1.0 / (1.0 + (-d).exp())) as f32
                })
                .collect();
            ProbabilityMap::new(logits.h, logits.w, p)
        })
        .collect()
}

/// Cloud probability of a normalized patch.
pub fn predict_patch(m: &UNetModel<f32>, p: &MultiBandPatch) -> Result<ProbabilityMap> {
    let x = batch_from_patches(&[p])?;
    let logits = m.predict_logits(&x)?;
    Ok(cloud_probabilities(&logits)?.remove(0))
}

/// Pixel mean of equally shaped maps, summed in list order in f64.
pub fn ensemble_mean(maps: &[ProbabilityMap]) -> Result<ProbabilityMap> {
    let first = maps.first().ok_or_else(|| arg_err!("ensemble of zero maps"))?;
    let shape = first.shape();
    let mut acc = vec![0.0f64; first.values().len()];
    for m in maps {
        if m.shape() != shape {
            return Err(arg_err!("ensemble maps differ in shape: {:?} vs {:?}", m.shape(), shape));
        }
        acc.iter_mut().zip(m.values()).for_each(|(a, &v)| *a += v as f64);
    }
    let k = maps.len() as f64;
    let values = acc.into_iter().map(|a| ((a / k) as f32).clamp(0.0, 1.0)).collect();
    ProbabilityMap::new(shape.0, shape.1, values)
}

/// Fold models sharing one configuration.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub members: Vec<UNetModel<f32>>,
    pub config: PipelineConfig,
}

impl EnsembleModel {
    pub fn new(members: Vec<UNetModel<f32>>, config: PipelineConfig) -> Result<Self> {
        if members.is_empty() {
            return Err(arg_err!("ensemble needs at least one member"));
        }
        let arch = config.architecture();
        if members.iter().any(|m| *m.architecture() != arch) {
            return Err(Error::Consistency("ensemble member architecture differs from config".into()));
        }
        Ok(Self { members, config })
    }

    /// Loads checkpoint directories, each of which must carry the config's hash.
    pub fn load(dirs: &[&Path], config: PipelineConfig) -> Result<Self> {
        let hash = config.hash();
        let members = dirs
            .iter()
            .map(|d| load_checkpoint(d, Some(&hash)).map(|(m, _)| m))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, config)
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    /// Member maps for one normalized patch, in member order.
    pub fn member_maps(&self, p: &MultiBandPatch) -> Result<Vec<ProbabilityMap>> {
        self.members.iter().map(|m| predict_patch(m, p)).collect()
    }

    pub fn predict_patch(&self, p: &MultiBandPatch) -> Result<ProbabilityMap> {
        ensemble_mean(&self.member_maps(p)?)
    }
}

/// Splits a normalized scene into network-sized tiles, ensembles each tile
/// and stitches the result.
pub fn sliding_window_predict(
    e: &EnsembleModel,
    scene: &MultiBandPatch,
    overlap: f32,
    blend: Blend,
) -> Result<ProbabilityMap> {
    let members: Vec<&UNetModel<f32>> = e.members.iter().collect();
    tiled_predict(&members, e.config.patch_size, scene, overlap, blend)
}

/// Tiles `scene` with `patch`-sized windows, averages the members on each
/// tile and stitches.
pub fn tiled_predict(
    members: &[&UNetModel<f32>],
    patch: (usize, usize),
    scene: &MultiBandPatch,
    overlap: f32,
    blend: Blend,
) -> Result<ProbabilityMap> {
    if members.is_empty() {
        return Err(arg_err!("ensemble needs at least one member"));
    }
    let (patches, grid) = split_scene(scene, patch, overlap)?;
    let maps = patches
        .par_iter()
        .map(|p| {
            let maps = members.iter().map(|m| predict_patch(m, p)).collect::<Result<Vec<_>>>()?;
            ensemble_mean(&maps)
        })
        .collect::<Result<Vec<_>>>()?;
    stitch_scene(&maps, &grid, blend)
}

/// `1` where the probability reaches `tau`.
pub fn binarize(map: &ProbabilityMap, tau: f32) -> Result<CloudMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(arg_err!("threshold {tau} outside (0, 1)"));
    }
    let (h, w) = map.shape();
    CloudMask::new(h, w, map.values().iter().map(|&p| (p >= tau) as u8).collect())
}
