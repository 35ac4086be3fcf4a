//! Dataset fingerprint: the standardized summary that drives configuration,
//! and the per-band normalization derived from it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical::{read_json, write_canonical};
use crate::error::{arg_err, Error, Result};
use crate::raster::{load_mask, load_patch, CloudMask, Manifest, MultiBandPatch};

pub const LOW_PERCENTILE: f64 = 0.5;
pub const HIGH_PERCENTILE: f64 = 99.5;
/// Pooled-pixel percentiles are computed on at most about this many pixels.
pub const PERCENTILE_SAMPLE_TARGET: u64 = 1_000_000;
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: f64,
    pub std: f64,
    pub p0_5: f64,
    pub p99_5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub n_patches: usize,
    pub band_count: usize,
    /// (H, W), per-axis lower median over patches.
    pub median_shape: (usize, usize),
    pub bands: Vec<BandStats>,
    /// Fraction of cloud pixels over all ground-truth masks.
    pub class_imbalance: f64,
    /// Pixels per band pooled over the dataset.
    pub n_pixels: u64,
    /// Every `percentile_stride`-th pooled pixel entered the percentile sort.
    pub percentile_stride: u64,
}

impl DatasetFingerprint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_canonical(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = read_json(path)?;
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.class_imbalance) {
            return Err(Error::Consistency(format!(
                "class imbalance {} outside [0,1]",
                self.class_imbalance
            )));
        }
        if self.median_shape.0 == 0 || self.median_shape.1 == 0 {
            return Err(Error::Consistency("median shape must be positive".into()));
        }
        if self.bands.len() != self.band_count {
            return Err(Error::Consistency("band stats do not match band count".into()));
        }
        for (i, b) in self.bands.iter().enumerate() {
            if b.p0_5 > b.p99_5 || !(b.std >= 0.0) {
                return Err(Error::Consistency(format!("band {i} statistics are inconsistent")));
            }
        }
        Ok(())
    }
}

/// Neumaier-compensated running sum; the result barely depends on order.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Nearest-rank percentile of a sorted slice.
pub fn nearest_rank(sorted: &[f32], pct: f64) -> f32 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

pub fn compute_fingerprint(manifest: &Manifest) -> Result<DatasetFingerprint> {
    let load = |i: usize| -> Result<(MultiBandPatch, Option<CloudMask>)> {
        let rec = &manifest.records[i];
        Ok((load_patch(manifest, rec)?, load_mask(manifest, rec)?))
    };
    fingerprint_from(manifest.len(), load)
}

/// Fingerprint over `n` patches produced on demand by `load` (called twice
/// per patch: once for sums, once for centred squares).
pub fn fingerprint_from<F>(n: usize, load: F) -> Result<DatasetFingerprint>
where
    F: Fn(usize) -> Result<(MultiBandPatch, Option<CloudMask>)>,
{
    if n == 0 {
        return Err(arg_err!("cannot fingerprint an empty manifest"));
    }

    let mut band_count = None;
    let mut heights = Vec::with_capacity(n);
    let mut widths = Vec::with_capacity(n);
    let mut cloud = 0u64;
    let mut mask_px = 0u64;
    let mut total = 0u64;
    let mut sums: Vec<CompensatedSum> = Vec::new();

    for i in 0..n {
        let (patch, mask) = load(i)?;
        check_record(&patch, mask.as_ref(), &mut band_count)?;
        let mask = mask.expect("checked above");
        heights.push(patch.height());
        widths.push(patch.width());
        cloud += mask.cloud_count() as u64;
        mask_px += mask.values().len() as u64;
        total += (patch.height() * patch.width()) as u64;
        sums.resize(patch.bands(), CompensatedSum::default());
        for (b, s) in sums.iter_mut().enumerate() {
            patch.band(b).iter().for_each(|&v| s.add(v as f64));
        }
    }
    let band_count = band_count.expect("n > 0");
    let means: Vec<f64> = sums.iter().map(|s| s.value() / total as f64).collect();

    let stride = total.div_ceil(PERCENTILE_SAMPLE_TARGET).max(1);
    let mut sq: Vec<CompensatedSum> = vec![CompensatedSum::default(); band_count];
    let mut samples: Vec<Vec<f32>> = vec![Vec::new(); band_count];
    let mut pooled_index = 0u64;
    for i in 0..n {
        let (patch, _) = load(i)?;
        if patch.bands() != band_count {
            return Err(Error::Consistency("dataset changed between passes".into()));
        }
        let npx = (patch.height() * patch.width()) as u64;
        for b in 0..band_count {
            let band = patch.band(b);
            let mu = means[b];
            band.iter().for_each(|&v| {
                let d = v as f64 - mu;
                sq[b].add(d * d)
            });
            let first = (stride - pooled_index % stride) % stride;
            samples[b].extend(band.iter().skip(first as usize).step_by(stride as usize));
        }
        pooled_index += npx;
    }

    let bands = (0..band_count)
        .map(|b| {
            let s = &mut samples[b];
            s.sort_by(f32::total_cmp);
            BandStats {
                mean: means[b],
                std: (sq[b].value() / total as f64).max(0.0).sqrt(),
                p0_5: nearest_rank(s, LOW_PERCENTILE) as f64,
                p99_5: nearest_rank(s, HIGH_PERCENTILE) as f64,
            }
        })
        .collect();

    heights.sort_unstable();
    widths.sort_unstable();
    let mid = (n - 1) / 2;
    Ok(DatasetFingerprint {
        n_patches: n,
        band_count,
        median_shape: (heights[mid], widths[mid]),
        bands,
        class_imbalance: cloud as f64 / mask_px as f64,
        n_pixels: total,
        percentile_stride: stride,
    })
}

fn check_record(
    patch: &MultiBandPatch,
    mask: Option<&CloudMask>,
    band_count: &mut Option<usize>,
) -> Result<()> {
    match band_count {
        None => *band_count = Some(patch.bands()),
        Some(b) if *b != patch.bands() => {
            return Err(Error::Consistency(format!(
                "patch {} has {} bands, earlier patches have {b}",
                patch.patch_id,
                patch.bands()
            )))
        }
        _ => {}
    }
    match mask {
        None => Err(Error::Consistency(format!(
            "patch {} has no ground-truth mask",
            patch.patch_id
        ))),
        Some(m) if m.shape() != patch.shape() => Err(Error::Consistency(format!(
            "patch {} mask shape {:?} differs from image {:?}",
            patch.patch_id,
            m.shape(),
            patch.shape()
        ))),
        _ => Ok(()),
    }
}

/// Per band: clip to the fingerprint's percentile window, then z-score with
/// the dataset mean and std.
pub fn normalize_patch(p: &MultiBandPatch, f: &DatasetFingerprint) -> Result<MultiBandPatch> {
    if p.bands() != f.band_count {
        return Err(arg_err!(
            "patch {} has {} bands, fingerprint expects {}",
            p.patch_id,
            p.bands(),
            f.band_count
        ));
    }
    let mut out = p.clone();
    for (b, stats) in f.bands.iter().enumerate() {
        let scale = stats.std.max(STD_FLOOR);
        for v in out.band_mut(b) {
            let clipped = (*v as f64).clamp(stats.p0_5, stats.p99_5);
            *v = ((clipped - stats.mean) / scale) as f32;
        }
    }
    Ok(out)
}
