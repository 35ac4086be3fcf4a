//! Visual overlays as binary portable pixmaps (P6).

use std::path::Path;

use crate::error::{arg_err, Result};

use super::image::{CloudMask, MultiBandPatch};

/// Lower / upper percentiles used to stretch each band to 0..=255.
pub const STRETCH_LO: f64 = 2.0;
pub const STRETCH_HI: f64 = 98.0;

/// An 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

fn nearest_rank(sorted: &[f32], pct: f64) -> f32 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Per-band 2–98 % percentile stretch of a three-band patch.
pub fn stretch_composite(rgb: &MultiBandPatch) -> Result<RgbImage> {
    if rgb.bands() != 3 {
        return Err(arg_err!("composite needs 3 bands, got {}", rgb.bands()));
    }
    let (h, w) = rgb.shape();
    let mut pixels = vec![0u8; h * w * 3];
    for b in 0..3 {
        let band = rgb.band(b);
        let mut sorted = band.to_vec();
        sorted.sort_by(f32::total_cmp);
        let lo = nearest_rank(&sorted, STRETCH_LO) as f64;
        let hi = nearest_rank(&sorted, STRETCH_HI) as f64;
        for (i, &v) in band.iter().enumerate() {
            let s = if hi > lo {
                ((v as f64 - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            };
            pixels[i * 3 + b] = s;
        }
    }
    Ok(RgbImage {
        width: w,
        height: h,
        pixels,
    })
}

/// Blends cloud pixels half-way toward white, rounding halves up.
pub fn paint_mask(base: &RgbImage, mask: &CloudMask) -> Result<RgbImage> {
    if mask.shape() != (base.height, base.width) {
        return Err(arg_err!(
            "mask {:?} does not match image {}x{}",
            mask.shape(),
            base.height,
            base.width
        ));
    }
    let mut out = base.clone();
    for (i, &m) in mask.values().iter().enumerate() {
        if m != 0 {
            for c in &mut out.pixels[i * 3..i * 3 + 3] {
                *c = (*c as u16 + 255).div_ceil(2) as u8;
            }
        }
    }
    Ok(out)
}

fn hstack(panels: &[RgbImage]) -> RgbImage {
    let h = panels[0].height;
    let width: usize = panels.iter().map(|p| p.width).sum();
    let mut pixels = Vec::with_capacity(width * h * 3);
    for y in 0..h {
        for p in panels {
            pixels.extend_from_slice(&p.pixels[y * p.width * 3..(y + 1) * p.width * 3]);
        }
    }
    RgbImage {
        width,
        height: h,
        pixels,
    }
}

/// Composite with the prediction painted on; with ground truth, a triptych
/// of plain composite | ground truth | prediction.
pub fn overlay_image(rgb: &MultiBandPatch, mask: &CloudMask, gt: Option<&CloudMask>) -> Result<RgbImage> {
    if mask.shape() != rgb.shape() {
        return Err(arg_err!("mask {:?} vs image {:?}", mask.shape(), rgb.shape()));
    }
    let base = stretch_composite(rgb)?;
    let pred = paint_mask(&base, mask)?;
    match gt {
        None => Ok(pred),
        Some(g) => {
            if g.shape() != rgb.shape() {
                return Err(arg_err!("ground truth {:?} vs image {:?}", g.shape(), rgb.shape()));
            }
            let truth = paint_mask(&base, g)?;
            Ok(hstack(&[base, truth, pred]))
        }
    }
}

pub fn render_overlay(rgb: &MultiBandPatch, mask: &CloudMask, gt: Option<&CloudMask>, path: &Path) -> Result<()> {
    let img = overlay_image(rgb, mask, gt)?;
    super::write_atomic(path, &img.to_ppm())
}
