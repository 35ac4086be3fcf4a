//! Single-band threshold detector with an Otsu default.

use crate::error::{arg_err, Result};
use crate::raster::CloudMask;

pub const OTSU_BINS: usize = 256;

/// `1` where the band reaches `tau`.
pub fn band_threshold(band: &[f32], height: usize, width: usize, tau: f32) -> Result<CloudMask> {
    if band.len() != height * width {
        return Err(arg_err!("{} band values for a {height}x{width} mask", band.len()));
    }
    if tau.is_nan() {
        return Err(arg_err!("threshold is NaN"));
    }
    CloudMask::new(height, width, band.iter().map(|&v| (v >= tau) as u8).collect())
}

/// Otsu's threshold over a 256-bin histogram spanning `[min, max]`. The
/// returned value is the upper edge of the last bin of the dark class.
/// `None` for an empty or constant sample, which has no split.
pub fn otsu_threshold(values: &[f32]) -> Option<f32> {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return None;
    }
    let width = (hi as f64 - lo as f64) / OTSU_BINS as f64;
    let mut hist = [0u64; OTSU_BINS];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let b = (((v as f64 - lo as f64) / width) as usize).min(OTSU_BINS - 1);
        hist[b] += 1;
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0u64, 0.0f64);
    let (mut best, mut best_k) = (-1.0f64, 0usize);
    for (k, &c) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += c;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let (m0, m1) = (sum0 / w0 as f64, (sum_all - sum0) / w1 as f64);
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_k = k;
        }
    }
    Some((lo as f64 + (best_k + 1) as f64 * width) as f32)
}
