use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeySummary {
    pub n: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

/// Quantile of sorted data: at fractional rank `q·(n−1)` take the midpoint
/// of the two neighbours when the rank falls between them.
pub fn midpoint_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if lo == hi {
        sorted[lo]
    } else {
        0.5 * (sorted[lo] + sorted[hi])
    }
}

pub fn tukey_summary(values: &[f64]) -> Result<TukeySummary> {
    if values.is_empty() {
        return Err(arg_err!("summary of an empty sample"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(arg_err!("summary of a non-finite value"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, median, q3) = (
        midpoint_quantile(&s, 0.25),
        midpoint_quantile(&s, 0.5),
        midpoint_quantile(&s, 0.75),
    );
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = s.iter().copied().filter(|v| (lo..=hi).contains(v));
    let whisker_lo = inside.clone().fold(f64::INFINITY, f64::min);
    let whisker_hi = inside.fold(f64::NEG_INFINITY, f64::max);
    Ok(TukeySummary {
        n: s.len(),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        q1,
        median,
        q3,
        whisker_lo,
        whisker_hi,
        outliers: s.iter().copied().filter(|v| !(lo..=hi).contains(v)).collect(),
    })
}
