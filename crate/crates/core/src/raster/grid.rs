//! Scene ↔ patch decomposition with overlap bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

use super::image::{MultiBandPatch, ProbabilityMap};

/// How overlapping patch predictions are weighted when stitched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Blend {
    Uniform,
    #[default]
    Gaussian,
}

impl std::str::FromStr for Blend {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Blend::Uniform),
            "gaussian" => Ok(Blend::Gaussian),
            other => Err(arg_err!("unknown blend {other:?} (uniform|gaussian)")),
        }
    }
}

/// Gaussian weights never drop below this fraction of their peak.
pub const GAUSSIAN_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub scene_id: Option<String>,
    pub scene_h: usize,
    pub scene_w: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    /// Top-left corners, row-major.
    pub offsets: Vec<(usize, usize)>,
    /// Number of distinct row / column offsets.
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(
        scene_id: Option<String>,
        scene: (usize, usize),
        patch: (usize, usize),
        overlap_fraction: f32,
    ) -> Result<Self> {
        let (sh, sw) = scene;
        let (ph, pw) = patch;
        if ph == 0 || pw == 0 {
            return Err(arg_err!("patch size must be positive"));
        }
        if ph > sh || pw > sw {
            return Err(arg_err!("patch {ph}x{pw} larger than scene {sh}x{sw}"));
        }
        if !(0.0..1.0).contains(&overlap_fraction) {
            return Err(arg_err!("overlap fraction {overlap_fraction} outside [0,1)"));
        }
        let stride_h = stride_for(ph, overlap_fraction);
        let stride_w = stride_for(pw, overlap_fraction);
        let ys = axis_offsets(sh, ph, stride_h);
        let xs = axis_offsets(sw, pw, stride_w);
        let offsets = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
            .collect();
        Ok(Self {
            scene_id,
            scene_h: sh,
            scene_w: sw,
            patch_h: ph,
            patch_w: pw,
            stride_h,
            stride_w,
            offsets,
            rows: ys.len(),
            cols: xs.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Grid (row, col) of the i-th patch.
    pub fn cell(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }

    /// How many patches cover each scene pixel.
    pub fn coverage(&self) -> Vec<u32> {
        let mut cov = vec![0u32; self.scene_h * self.scene_w];
        for &(top, left) in &self.offsets {
            for y in top..top + self.patch_h {
                for c in &mut cov[y * self.scene_w + left..y * self.scene_w + left + self.patch_w] {
                    *c += 1;
                }
            }
        }
        cov
    }
}

fn stride_for(patch: usize, overlap: f32) -> usize {
    ((patch as f64 * (1.0 - overlap as f64)).floor() as usize).max(1)
}

/// Regular offsets, with the last one clamped to `scene - patch` so the far
/// edge is always covered.
fn axis_offsets(scene: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = scene - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().expect("offset 0 always present") != last {
        out.push(last);
    }
    out
}

/// Cuts a scene into (possibly overlapping) patches. Patch ids are
/// `{scene}_r{row}_c{col}`.
pub fn split_scene(
    scene: &MultiBandPatch,
    patch: (usize, usize),
    overlap_fraction: f32,
) -> Result<(Vec<MultiBandPatch>, PatchGrid)> {
    let grid = PatchGrid::new(scene.scene_id.clone(), scene.shape(), patch, overlap_fraction)?;
    let base = scene.scene_id.clone().unwrap_or_else(|| scene.patch_id.clone());
    let patches = grid
        .offsets
        .iter()
        .enumerate()
        .map(|(i, &(top, left))| {
            let (r, c) = grid.cell(i);
            scene.crop(format!("{base}_r{r}_c{c}"), top, left, patch.0, patch.1)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((patches, grid))
}

/// Cuts a scene-sized map along an existing grid.
pub fn split_map(map: &ProbabilityMap, grid: &PatchGrid) -> Result<Vec<ProbabilityMap>> {
    if map.shape() != (grid.scene_h, grid.scene_w) {
        return Err(arg_err!("map shape {:?} does not match grid scene", map.shape()));
    }
    grid.offsets
        .iter()
        .map(|&(top, left)| map.crop(top, left, grid.patch_h, grid.patch_w))
        .collect()
}

/// Separable Gaussian centred in the patch, σ = size/8, peak 1, clamped
/// below at [`GAUSSIAN_FLOOR`]. Row-major `h*w`.
pub fn gaussian_weights(h: usize, w: usize) -> Vec<f64> {
    let axis = |n: usize| -> Vec<f64> {
        let sigma = n as f64 / 8.0;
        let centre = (n as f64 - 1.0) / 2.0;
        (0..n)
            .map(|i| {
                let d = i as f64 - centre;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect()
    };
    let gy = axis(h);
    let gx = axis(w);
    let peak = gy.iter().cloned().fold(0.0, f64::max) * gx.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::with_capacity(h * w);
    for &a in &gy {
        for &b in &gx {
            out.push((a * b / peak).max(GAUSSIAN_FLOOR));
        }
    }
    out
}

pub fn blend_weights(blend: Blend, h: usize, w: usize) -> Vec<f64> {
    match blend {
        Blend::Uniform => vec![1.0; h * w],
        Blend::Gaussian => gaussian_weights(h, w),
    }
}

/// Weighted average of overlapping patch maps. Accumulation runs in patch
/// order in f64.
pub fn stitch_scene(maps: &[ProbabilityMap], grid: &PatchGrid, blend: Blend) -> Result<ProbabilityMap> {
    if maps.len() != grid.len() {
        return Err(arg_err!("{} maps for a grid of {} patches", maps.len(), grid.len()));
    }
    if let Some(m) = maps.iter().find(|m| m.shape() != (grid.patch_h, grid.patch_w)) {
        return Err(arg_err!(
            "patch map {:?} does not match grid patch {}x{}",
            m.shape(),
            grid.patch_h,
            grid.patch_w
        ));
    }
    let weights = blend_weights(blend, grid.patch_h, grid.patch_w);
    let n = grid.scene_h * grid.scene_w;
    let mut num = vec![0.0f64; n];
    let mut den = vec![0.0f64; n];
    for (map, &(top, left)) in maps.iter().zip(&grid.offsets) {
        let vals = map.values();
        for py in 0..grid.patch_h {
            let row = (top + py) * grid.scene_w + left;
            for px in 0..grid.patch_w {
                let w = weights[py * grid.patch_w + px];
                num[row + px] += w * vals[py * grid.patch_w + px] as f64;
                den[row + px] += w;
            }
        }
    }
    let values = num
        .iter()
        .zip(&den)
        .map(|(&a, &b)| ((a / b) as f32).clamp(0.0, 1.0))
        .collect();
    ProbabilityMap::new(grid.scene_h, grid.scene_w, values)
}
