//! Rule engine turning a dataset fingerprint and a memory budget into a
//! complete training and inference plan.
//!
//! Rules, applied in order and echoed into a numbered trace:
//!
//! 1. the patch starts at the dataset's median shape;
//! 2. depth `d` is the largest `d <= d_max` whose coarsest feature map keeps
//!    at least `min_feature` pixels along the short axis, and both axes are
//!    rounded down to a multiple of `2^d`;
//! 3. stage `s` gets `base·2^s` channels, capped;
//! 4. batch is the largest power of two `>= 2` whose memory estimate fits
//!    the budget (and covers at most 5 % of the dataset's pixels);
//! 5. when not even a batch of 2 fits, the longer patch axis is halved and
//!    rules 2–4 repeat; dropping below `min_patch_edge` is an error;
//! 6. training and inference defaults are filled in.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical::{read_json, to_canonical_line, write_canonical};
use crate::error::{arg_err, Error, Result};
use crate::fingerprint::DatasetFingerprint;
use crate::net::arch::{estimate_training_bytes, Architecture};
use crate::raster::Blend;

pub const GIB: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryBudget {
    pub bytes_available: u64,
    pub safety_factor: f32,
}

impl Default for MemoryBudget {
    /// A 24 GiB training card.
    fn default() -> Self {
        Self {
            bytes_available: 24 * GIB,
            safety_factor: 0.85,
        }
    }
}

impl MemoryBudget {
    pub fn from_gb(gb: f64) -> Result<Self> {
        let bytes = (gb * GIB as f64).round();
        if !(bytes >= 1.0) || !bytes.is_finite() {
            return Err(arg_err!("memory budget must be positive, got {gb} GB"));
        }
        Ok(Self {
            bytes_available: bytes as u64,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.bytes_available == 0 {
            return Err(arg_err!("memory budget must be positive"));
        }
        if !(self.safety_factor > 0.0 && self.safety_factor <= 1.0) {
            return Err(arg_err!("safety factor {} outside (0,1]", self.safety_factor));
        }
        Ok(())
    }

    pub fn usable(&self) -> f64 {
        self.safety_factor as f64 * self.bytes_available as f64
    }
}

/// Topology constants of the rule set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchRules {
    pub max_downsamplings: usize,
    pub min_feature: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// Shrinking the patch below this edge length is a budget error.
    pub min_patch_edge: usize,
    /// A batch may cover at most this fraction of the dataset's pixels.
    pub max_batch_dataset_fraction: f64,
}

impl Default for ArchRules {
    fn default() -> Self {
        Self {
            max_downsamplings: 5,
            min_feature: 8,
            base_channels: 32,
            max_channels: 512,
            min_patch_edge: 64,
            max_batch_dataset_fraction: 0.05,
        }
    }
}

pub const NORMALIZATION_CLIP_ZSCORE: &str = "clip_zscore";
pub const DEFAULT_EPOCHS: usize = 1000;
pub const DEFAULT_BATCHES_PER_EPOCH: usize = 50;
pub const DEFAULT_LR0: f32 = 0.01;
pub const DEFAULT_MOMENTUM: f32 = 0.99;
pub const DEFAULT_THRESHOLD: f32 = 0.5;
pub const DEFAULT_OVERLAP: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub band_count: usize,
    pub patch_size: (usize, usize),
    pub batch_size: usize,
    pub n_downsamplings: usize,
    pub channels_per_stage: Vec<usize>,
    pub n_folds: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub lr0: f32,
    pub momentum: f32,
    pub normalization: String,
    pub ensemble: bool,
    pub blend: Blend,
    pub overlap: f32,
    pub threshold: f32,
}

impl PipelineConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.band_count, self.channels_per_stage.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.n_downsamplings;
        if !(1..=5).contains(&d) {
            return Err(arg_err!("downsamplings {d} outside 1..=5"));
        }
        if self.channels_per_stage.len() != d + 1 {
            return Err(arg_err!("{} channel entries for depth {d}", self.channels_per_stage.len()));
        }
        if self.channels_per_stage.windows(2).any(|w| w[1] < w[0]) || self.channels_per_stage[0] == 0 {
            return Err(arg_err!("channels must be positive and nondecreasing"));
        }
        let unit = 1usize << d;
        if !self.patch_size.0.is_multiple_of(unit) || !self.patch_size.1.is_multiple_of(unit) || self.patch_size.0 == 0 {
            return Err(arg_err!("patch {:?} not divisible by {unit}", self.patch_size));
        }
        if self.batch_size < 2 {
            return Err(arg_err!("batch size {} below 2", self.batch_size));
        }
        if !(4..=5).contains(&self.n_folds) {
            return Err(arg_err!("fold count {} outside {{4,5}}", self.n_folds));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(arg_err!("threshold {} outside (0,1)", self.threshold));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(arg_err!("overlap {} outside [0,1)", self.overlap));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_canonical(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = read_json(path)?;
        c.validate()?;
        Ok(c)
    }

    /// FNV-1a over the canonical single-line JSON, as 16 hex digits.
    pub fn hash(&self) -> String {
        let line = to_canonical_line(self).expect("config always serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in line.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// A configuration together with the numbered rule trace that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Configured {
    pub config: PipelineConfig,
    pub trace: Vec<String>,
}

impl Configured {
    pub fn trace_text(&self) -> String {
        let mut s = String::new();
        for (i, line) in self.trace.iter().enumerate() {
            s.push_str(&format!("{}. {line}\n", i + 1));
        }
        s
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.trace.push(line.into());
    }
}

pub fn estimate_memory(c: &PipelineConfig, batch: usize) -> u64 {
    estimate_training_bytes(&c.architecture(), c.patch_size, batch)
}

pub fn count_parameters(c: &PipelineConfig) -> u64 {
    c.architecture().param_count()
}

pub fn configure_pipeline(f: &DatasetFingerprint, b: &MemoryBudget, k: usize) -> Result<Configured> {
    configure_pipeline_with(f, b, k, &ArchRules::default())
}

fn depth_for(patch: (usize, usize), rules: &ArchRules) -> usize {
    let short = patch.0.min(patch.1);
    (0..=rules.max_downsamplings)
        .rev()
        .find(|&d| short >= rules.min_feature << d)
        .unwrap_or(0)
}

fn channels_for(depth: usize, rules: &ArchRules) -> Vec<usize> {
    (0..=depth)
        .map(|s| (rules.base_channels << s).min(rules.max_channels))
        .collect()
}

fn round_to(patch: (usize, usize), depth: usize) -> (usize, usize) {
    let unit = 1usize << depth;
    (patch.0 / unit * unit, patch.1 / unit * unit)
}

pub fn configure_pipeline_with(
    f: &DatasetFingerprint,
    b: &MemoryBudget,
    k: usize,
    rules: &ArchRules,
) -> Result<Configured> {
    f.validate()?;
    b.validate()?;
    if !(4..=5).contains(&k) {
        return Err(arg_err!("fold count {k} outside {{4,5}}"));
    }
    if rules.base_channels == 0 || rules.max_channels < rules.base_channels {
        return Err(arg_err!("channel rules need 0 < base <= cap"));
    }
    let mut trace = Vec::new();
    let usable = b.usable();
    let mut patch = f.median_shape;
    trace.push(format!(
        "patch <- median training shape {}x{}",
        patch.0, patch.1
    ));

    loop {
        let depth = depth_for(patch, rules);
        if depth == 0 {
            return Err(Error::Consistency(format!(
                "patch {}x{} is too small for a single downsampling (needs short edge >= {})",
                patch.0,
                patch.1,
                2 * rules.min_feature
            )));
        }
        let rounded = round_to(patch, depth);
        trace.push(format!(
            "depth <- {depth} (short edge {} / 2^{depth} = {} >= {}); patch rounded to {}x{}",
            patch.0.min(patch.1),
            patch.0.min(patch.1) >> depth,
            rules.min_feature,
            rounded.0,
            rounded.1
        ));
        patch = rounded;
        let channels = channels_for(depth, rules);
        trace.push(format!(
            "channels <- {channels:?} (base {} doubling per stage, cap {})",
            rules.base_channels, rules.max_channels
        ));
        let arch = Architecture::new(f.band_count, channels.clone());

        let area = (patch.0 * patch.1) as f64;
        let coverage_cap = (rules.max_batch_dataset_fraction * f.n_pixels as f64 / area).floor();
        let cap = if coverage_cap >= 2.0 {
            prev_power_of_two(coverage_cap.min((1u64 << 20) as f64) as usize)
        } else {
            2
        };
        let fits = |batch: usize| estimate_training_bytes(&arch, patch, batch) as f64 <= usable;
        if fits(2) {
            let mut batch = 2;
            while batch * 2 <= cap && fits(batch * 2) {
                batch *= 2;
            }
            trace.push(format!(
                "batch <- {batch} (estimate {} B <= {:.0} B usable; dataset cap {cap})",
                estimate_training_bytes(&arch, patch, batch),
                usable
            ));
            let config = PipelineConfig {
                band_count: f.band_count,
                patch_size: patch,
                batch_size: batch,
                n_downsamplings: depth,
                channels_per_stage: channels,
                n_folds: k,
                epochs: DEFAULT_EPOCHS,
                batches_per_epoch: DEFAULT_BATCHES_PER_EPOCH,
                lr0: DEFAULT_LR0,
                momentum: DEFAULT_MOMENTUM,
                normalization: NORMALIZATION_CLIP_ZSCORE.to_string(),
                ensemble: true,
                blend: Blend::Gaussian,
                overlap: DEFAULT_OVERLAP,
                threshold: DEFAULT_THRESHOLD,
            };
            trace.push(format!(
                "defaults: epochs={} batches_per_epoch={} lr0={} momentum={} threshold={} blend=gaussian overlap={} ensemble of {k} folds, normalization={}",
                config.epochs,
                config.batches_per_epoch,
                config.lr0,
                config.momentum,
                config.threshold,
                config.overlap,
                config.normalization
            ));
            config.validate()?;
            return Ok(Configured { config, trace });
        }

        let need = estimate_training_bytes(&arch, patch, 2);
        let mut next = patch;
        if next.0 >= next.1 {
            next.0 /= 2;
        } else {
            next.1 /= 2;
        }
        if next.0 < rules.min_patch_edge || next.1 < rules.min_patch_edge {
            return Err(Error::Budget(format!(
                "batch 2 at patch {}x{} needs {need} B, {usable:.0} B usable, and the patch cannot shrink below {}",
                patch.0, patch.1, rules.min_patch_edge
            )));
        }
        trace.push(format!(
            "shrink: batch 2 at {}x{} needs {need} B > {usable:.0} B usable; patch -> {}x{}",
            patch.0, patch.1, next.0, next.1
        ));
        patch = next;
    }
}

fn prev_power_of_two(n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    1 << (usize::BITS - 1 - n.leading_zeros())
}
