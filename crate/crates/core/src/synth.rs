//! Deterministic synthetic cloud scenes.
//!
//! Background reflectance is smooth value noise sharing one field across
//! bands plus a weaker per-band field. Clouds are the top `density` quantile
//! of another smooth field; a third field marks a `haze_fraction` of the
//! cloud pixels as haze, brightened at 35% of full strength. Clouds are
//! spectrally flat, the background is not.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::raster::{save_mask, save_tensor, CloudMask, Manifest, ManifestRecord, MultiBandPatch, Tensor, TensorData};
use crate::train::derive_seed;

pub const MAX_DENSITY: f64 = 0.95;
pub const MIN_SCENE_EDGE: usize = 64;
pub const HAZE_STRENGTH: f32 = 0.35;
/// Reflectance added by a thick cloud.
pub const CLOUD_GAIN: f32 = 0.4;
/// Stored value per unit reflectance.
pub const REFLECTANCE_SCALE: f32 = 10000.0;
const BAND_GAINS: [f32; 6] = [0.55, 0.75, 1.0, 1.7, 1.3, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_scenes: usize,
    pub height: usize,
    pub width: usize,
    pub band_count: usize,
    pub density: f64,
    pub haze_fraction: f64,
    pub noise_std: f32,
    pub seed: u64,
    /// Tile size of the emitted patches; must divide the scene.
    pub patch: (usize, usize),
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_scenes: 50,
            height: 128,
            width: 128,
            band_count: 4,
            density: 0.3,
            haze_fraction: 0.2,
            noise_std: 0.01,
            seed: 0,
            patch: (64, 64),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 || self.band_count == 0 {
            return Err(arg_err!("need at least one scene and one band"));
        }
        if self.height < MIN_SCENE_EDGE || self.width < MIN_SCENE_EDGE {
            return Err(arg_err!("scene {}x{} smaller than {MIN_SCENE_EDGE}", self.height, self.width));
        }
        if !(0.0..=1.0).contains(&self.density) || !(0.0..=1.0).contains(&self.haze_fraction) {
            return Err(arg_err!("density and haze fraction must lie in [0, 1]"));
        }
        if self.density > MAX_DENSITY {
            return Err(arg_err!("density {} cannot be met (max {MAX_DENSITY})", self.density));
        }
        if !(self.noise_std >= 0.0) {
            return Err(arg_err!("noise std must be non-negative"));
        }
        let (ph, pw) = self.patch;
        if ph < 8 || pw < 8 || !self.height.is_multiple_of(ph) || !self.width.is_multiple_of(pw) {
            return Err(arg_err!(
                "patch {ph}x{pw} must be at least 8 and divide the {}x{} scene",
                self.height,
                self.width
            ));
        }
        Ok(())
    }
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise: uniform lattice values every `cell` pixels, smoothstep
/// interpolated. Range [0, 1].
pub fn value_noise<R: Rng>(h: usize, w: usize, cell: usize, rng: &mut R) -> Vec<f32> {
    let (gh, gw) = (h / cell + 2, w / cell + 2);
    let lattice: Vec<f32> = (0..gh * gw).map(|_| rng.random()).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (gy, ty) = (y / cell, smoothstep((y % cell) as f32 / cell as f32));
        for x in 0..w {
            let (gx, tx) = (x / cell, smoothstep((x % cell) as f32 / cell as f32));
            let v = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let top = v(gy, gx) * (1.0 - tx) + v(gy, gx + 1) * tx;
            let bot = v(gy + 1, gx) * (1.0 - tx) + v(gy + 1, gx + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn octaves<R: Rng>(h: usize, w: usize, cells: &[usize], rng: &mut R) -> Vec<f32> {
    let mut acc = vec![0.0f32; h * w];
    let mut total = 0.0;
    for (i, &c) in cells.iter().enumerate() {
        let amp = 0.5f32.powi(i as i32);
        total += amp;
        for (a, v) in acc.iter_mut().zip(value_noise(h, w, c, rng)) {
            *a += amp * v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    acc
}

/// Value at the top `fraction` quantile: at most `fraction·n` entries lie
/// strictly above it. Infinity when `fraction` is 0.
fn upper_quantile(values: &[f32], fraction: f64) -> f32 {
    let k = (fraction * values.len() as f64).round() as usize;
    if k == 0 {
        return f32::INFINITY;
    }
    let mut s = values.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s[k - 1]
}

/// One scene as reflectance (not scaled) with its ground truth.
pub fn generate_scene(spec: &SynthSpec, index: usize) -> Result<(MultiBandPatch, CloudMask)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
    let shared = octaves(h, w, &[32, 16], &mut rng);
    let cloud_field = octaves(h, w, &[32, 16, 8], &mut rng);
    let haze_field = octaves(h, w, &[24, 12], &mut rng);

    let cut = upper_quantile(&cloud_field, spec.density);
    let mask = CloudMask::new(h, w, cloud_field.iter().map(|&v| (v >= cut) as u8).collect())?;
    let cloud_values: Vec<f32> = cloud_field
        .iter()
        .zip(&haze_field)
        .filter(|(c, _)| **c >= cut)
        .map(|(_, hz)| *hz)
        .collect();
    let haze_cut = upper_quantile(&cloud_values, 1.0 - spec.haze_fraction);
    let gain: Vec<f32> = cloud_field
        .iter()
        .zip(&haze_field)
        .map(|(&c, &hz)| match (c >= cut, hz >= haze_cut) {
            (false, _) => 0.0,
            (true, true) => CLOUD_GAIN,
            (true, false) => CLOUD_GAIN * HAZE_STRENGTH,
        })
        .collect();

    let noise = Normal::new(0.0f32, spec.noise_std.max(f32::MIN_POSITIVE))
        .map_err(|e| Error::Numeric(format!("noise distribution: {e}")))?;
    let mut planes = Vec::with_capacity(spec.band_count);
    for b in 0..spec.band_count {
        let own = octaves(h, w, &[16, 8], &mut rng);
        let g = BAND_GAINS[b % BAND_GAINS.len()];
        let plane = (0..h * w)
            .map(|i| {
                let n = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                (0.03 + 0.12 * g * shared[i] + 0.06 * own[i] + gain[i] + n).max(0.0)
            })
            .collect();
        planes.push(plane);
    }
    let scene = MultiBandPatch::from_planes(scene_id(index), Some(scene_id(index)), h, w, planes)?;
    Ok((scene, mask))
}

pub fn scene_id(index: usize) -> String {
    format!("scene{index:03}")
}

fn to_u16(values: &[f32]) -> Vec<u16> {
    values
        .iter()
        .map(|v| (v * REFLECTANCE_SCALE).round().clamp(0.0, u16::MAX as f32) as u16)
        .collect()
}

/// Writes every scene as non-overlapping tiles: u16 band tensors under
/// `bands/`, u8 masks under `masks/`, and `manifest.jsonl` in `out`.
pub fn generate_synthetic_dataset(spec: &SynthSpec, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    for sub in ["bands", "masks"] {
        std::fs::create_dir_all(out.join(sub))
            .map_err(|e| Error::io(format!("creating {}", out.join(sub).display()), e))?;
    }
    let per_scene = (0..spec.n_scenes)
        .into_par_iter()
        .map(|i| {
            let (scene, mask) = generate_scene(spec, i)?;
            let (ph, pw) = spec.patch;
            let mut records = Vec::new();
            for r in 0..spec.height / ph {
                for c in 0..spec.width / pw {
                    let sid = scene_id(i);
                    let id = format!("{sid}_r{r}_c{c}");
                    let tile = scene.crop(id.clone(), r * ph, c * pw, ph, pw)?;
                    let mut band_paths = Vec::new();
                    for b in 0..spec.band_count {
                        let rel = format!("bands/{id}_b{b}.cseg");
                        let t = Tensor::new(vec![ph, pw], TensorData::U16(to_u16(tile.band(b))))?;
                        save_tensor(&t, &out.join(&rel))?;
                        band_paths.push(rel);
                    }
                    let m = CloudMask::from_fn(ph, pw, |y, x| mask.get(r * ph + y, c * pw + x));
                    let mask_rel = format!("masks/{id}.cseg");
                    save_mask(&m, &out.join(&mask_rel))?;
                    records.push(ManifestRecord {
                        patch_id: id,
                        scene_id: Some(sid),
                        band_paths,
                        mask_path: Some(mask_rel),
                        grid_row: r,
                        grid_col: c,
                    });
                }
            }
            Ok(records)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(out, per_scene.into_iter().flatten().collect());
    manifest.save(&out.join("manifest.jsonl"))?;
    Ok(manifest)
}
