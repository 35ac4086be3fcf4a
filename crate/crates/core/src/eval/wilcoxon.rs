use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

/// Largest sample (after dropping zero differences) tested exactly.
pub const EXACT_MAX_N: usize = 20;
pub const MIN_NONZERO: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(w_plus, w_minus)`.
    pub statistic: f64,
    pub p: f64,
    pub method: WilcoxonMethod,
}

/// Signed ranks of the non-zero differences `a − b`, doubled so that tied
/// average ranks stay integral. Returns `(doubled ranks, positive?)`.
pub fn signed_ranks(a: &[f64], b: &[f64]) -> Vec<(u64, bool)> {
    let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let mut out = Vec::with_capacity(d.len());
    let mut i = 0;
    while i < d.len() {
        let mut j = i;
        while j + 1 < d.len() && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        // ranks i+1..=j+1, doubled average = i+j+2
        for v in &d[i..=j] {
            out.push(((i + j + 2) as u64, *v > 0.0));
        }
        i = j + 1;
    }
    out
}

/// Exact two-tailed p from the null distribution of the doubled positive
/// rank sum.
pub fn exact_p(ranks: &[(u64, bool)]) -> f64 {
    let total: u64 = ranks.iter().map(|r| r.0).sum();
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    for &(r, _) in ranks {
        for s in (r as usize..=total as usize).rev() {
            counts[s] += counts[s - r as usize];
        }
    }
    let w2: u64 = ranks.iter().filter(|r| r.1).map(|r| r.0).sum();
    let all = 2f64.powi(ranks.len() as i32);
    let lower: f64 = counts[..=w2 as usize].iter().sum::<f64>() / all;
    let upper: f64 = counts[w2 as usize..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

/// Normal approximation with tie-corrected variance and continuity
/// correction.
pub fn normal_p(ranks: &[(u64, bool)]) -> f64 {
    let n = ranks.len() as f64;
    let w_plus: f64 = ranks.iter().filter(|r| r.1).map(|r| r.0 as f64 / 2.0).sum();
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted: Vec<u64> = ranks.iter().map(|r| r.0).collect();
    sorted.sort_unstable();
    for g in sorted.chunk_by(|x, y| x == y) {
        let t = g.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

pub fn wilcoxon_two_tailed(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(arg_err!("paired samples of lengths {} and {}", a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(arg_err!("paired samples contain a non-finite value"));
    }
    let ranks = signed_ranks(a, b);
    let n = ranks.len();
    let w_plus: f64 = ranks.iter().filter(|r| r.1).map(|r| r.0 as f64 / 2.0).sum();
    let w_minus = (n * (n + 1)) as f64 / 2.0 - w_plus;
    let (p, method) = if n == 0 {
        (1.0, WilcoxonMethod::Degenerate)
    } else if n < MIN_NONZERO {
        return Err(arg_err!(
            "only {n} non-zero differences; at least {MIN_NONZERO} are required"
        ));
    } else if n <= EXACT_MAX_N {
        (exact_p(&ranks), WilcoxonMethod::Exact)
    } else {
        (normal_p(&ranks), WilcoxonMethod::Normal)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        statistic: w_plus.min(w_minus),
        p,
        method,
    })
}
