//! Brute-force reference implementations, written from the definitions and
//! independent of the library code paths.

use cloudseg::autoconfig::PipelineConfig;
use cloudseg::raster::CloudMask;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_mask(h: usize, w: usize, density: f64, r: &mut ChaCha8Rng) -> CloudMask {
    CloudMask::from_fn(h, w, |_, _| r.random_bool(density))
}

/// Random blobs: a few filled rectangles plus salt-and-pepper flips, so the
/// morphology sees both large regions and isolated pixels.
pub fn blobby_mask(h: usize, w: usize, r: &mut ChaCha8Rng) -> CloudMask {
    let mut v = vec![0u8; h * w];
    for _ in 0..r.random_range(0..5) {
        let (y0, x0) = (r.random_range(0..h), r.random_range(0..w));
        let (bh, bw) = (r.random_range(1..=h / 2), r.random_range(1..=w / 2));
        for y in y0..(y0 + bh).min(h) {
            for x in x0..(x0 + bw).min(w) {
                v[y * w + x] = 1;
            }
        }
    }
    let flip = r.random_range(0.0..0.2);
    for p in &mut v {
        if r.random_bool(flip) {
            *p ^= 1;
        }
    }
    CloudMask::new(h, w, v).unwrap()
}

/// (tp, fp, fn, tn) by visiting every pixel.
pub fn confusion_oracle(pred: &CloudMask, gt: &CloudMask) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let (p, g) = (pred.get(y, x), gt.get(y, x));
            if p && g {
                tp += 1;
            } else if p {
                fp += 1;
            } else if g {
                fneg += 1;
            } else {
                tn += 1;
            }
        }
    }
    (tp, fp, fneg, tn)
}

fn frac(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// [ji, pr, re, spe, oa] from set cardinalities.
pub fn metrics_oracle(pred: &CloudMask, gt: &CloudMask) -> [Option<f64>; 5] {
    let n = gt.height() * gt.width();
    let mut inter = 0u64;
    let mut union = 0u64;
    let mut n_pred = 0u64;
    let mut n_gt = 0u64;
    let mut agree = 0u64;
    for i in 0..n {
        let (p, g) = (pred.values()[i] == 1, gt.values()[i] == 1);
        inter += (p && g) as u64;
        union += (p || g) as u64;
        n_pred += p as u64;
        n_gt += g as u64;
        agree += (p == g) as u64;
    }
    let clear_gt = n as u64 - n_gt;
    let clear_both = agree - inter;
    [
        frac(inter, union),
        frac(inter, n_pred),
        frac(inter, n_gt),
        frac(clear_both, clear_gt),
        frac(agree, n as u64),
    ]
}

/// Padded-window morphology. `pad` is the value assumed outside the mask;
/// `all` selects erosion (AND over the window) instead of dilation (OR).
fn window(m: &CloudMask, taps: &[[bool; 3]; 3], pad: u8, all: bool, reflect: bool) -> CloudMask {
    let (h, w) = m.shape();
    let mut padded = vec![pad; (h + 2) * (w + 2)];
    for y in 0..h {
        for x in 0..w {
            padded[(y + 1) * (w + 2) + x + 1] = m.get(y, x) as u8;
        }
    }
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = all;
            for r in 0..3 {
                for c in 0..3 {
                    if !taps[r][c] {
                        continue;
                    }
                    let (rr, cc) = if reflect { (2 - r, 2 - c) } else { (r, c) };
                    let v = padded[(y + rr) * (w + 2) + x + cc] == 1;
                    acc = if all { acc && v } else { acc || v };
                }
            }
            out[y * w + x] = acc as u8;
        }
    }
    CloudMask::new(h, w, out).unwrap()
}

/// Dilation: some `p − b` (b in the element) is cloud.
pub fn dilate_oracle(m: &CloudMask, taps: &[[bool; 3]; 3]) -> CloudMask {
    window(m, taps, 0, false, true)
}

/// Erosion: every `p + b` is cloud.
pub fn erode_oracle(m: &CloudMask, taps: &[[bool; 3]; 3]) -> CloudMask {
    window(m, taps, 1, true, false)
}

pub fn open_oracle(m: &CloudMask, taps: &[[bool; 3]; 3]) -> CloudMask {
    dilate_oracle(&erode_oracle(m, taps), taps)
}

pub fn close_oracle(m: &CloudMask, taps: &[[bool; 3]; 3]) -> CloudMask {
    erode_oracle(&dilate_oracle(m, taps), taps)
}

/// Close when the cloud fraction exceeds one half, open otherwise.
pub fn adaptive_oracle(m: &CloudMask) -> CloudMask {
    let full = [[true; 3]; 3];
    let fraction = m.values().iter().filter(|&&v| v == 1).count() as f64 / m.values().len() as f64;
    if fraction > 0.5 {
        close_oracle(m, &full)
    } else {
        open_oracle(m, &full)
    }
}

/// Average ranks of |d| by counting, dropping zero differences.
fn oracle_ranks(d: &[f64]) -> Vec<(f64, bool)> {
    let nz: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    nz.iter()
        .map(|&v| {
            let below = nz.iter().filter(|u| u.abs() < v.abs()).count() as f64;
            let equal = nz.iter().filter(|u| u.abs() == v.abs()).count() as f64;
            (below + (equal + 1.0) / 2.0, v > 0.0)
        })
        .collect()
}

/// Two-tailed exact signed-rank p by enumerating all 2^n sign patterns.
/// Returns `(n, w_plus, p)`.
pub fn wilcoxon_enumeration(a: &[f64], b: &[f64]) -> (usize, f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let ranks = oracle_ranks(&d);
    let n = ranks.len();
    let w: f64 = ranks.iter().filter(|r| r.1).map(|r| r.0).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for signs in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| ranks[i].0).sum();
        if s <= w + 1e-9 {
            le += 1;
        }
        if s >= w - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    let p = (2.0 * (le.min(ge) as f64) / total).min(1.0);
    (n, w, p)
}

/// Quartile at fractional index q·(n−1), midpoint between neighbours.
pub fn quartile_oracle(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = q * (s.len() as f64 - 1.0);
    if idx.fract() == 0.0 {
        s[idx as usize]
    } else {
        (s[idx.floor() as usize] + s[idx.ceil() as usize]) / 2.0
    }
}

/// (outliers sorted, lowest inlier, highest inlier) from the 1.5·IQR fences.
pub fn fence_oracle(values: &[f64]) -> (Vec<f64>, f64, f64) {
    let q1 = quartile_oracle(values, 0.25);
    let q3 = quartile_oracle(values, 0.75);
    let lo = q1 - 1.5 * (q3 - q1);
    let hi = q3 + 1.5 * (q3 - q1);
    let mut outliers = Vec::new();
    let mut wlo = f64::INFINITY;
    let mut whi = f64::NEG_INFINITY;
    for &v in values {
        if v < lo || v > hi {
            outliers.push(v);
        } else {
            wlo = wlo.min(v);
            whi = whi.max(v);
        }
    }
    outliers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (outliers, wlo, whi)
}

/// Parameter count written out stage by stage.
pub fn param_oracle(bands: usize, ch: &[usize]) -> u64 {
    let conv3 = |cin: usize, cout: usize| (cin * cout * 9 + cout) as u64;
    let norm = |c: usize| 2 * c as u64;
    let mut total = 0;
    for s in 0..ch.len() {
        let cin = if s == 0 { bands } else { ch[s - 1] };
        total += conv3(cin, ch[s]) + norm(ch[s]) + conv3(ch[s], ch[s]) + norm(ch[s]);
    }
    for s in 0..ch.len() - 1 {
        let up = (ch[s + 1] * ch[s] * 4 + ch[s]) as u64;
        total += up + conv3(2 * ch[s], ch[s]) + norm(ch[s]) + conv3(ch[s], ch[s]) + norm(ch[s]);
    }
    total + (ch[0] * 2 + 2) as u64
}

/// Training-memory estimate: 4 bytes · batch · 2 · activations, plus 12
/// bytes per parameter.
pub fn memory_oracle(c: &PipelineConfig, batch: usize) -> u64 {
    let ch = &c.channels_per_stage;
    let d = ch.len() - 1;
    let mut elements = 0u64;
    for s in 0..=d {
        let per = (c.patch_size.0 >> s) as u64 * (c.patch_size.1 >> s) as u64 * ch[s] as u64 * 2;
        elements += per;
        if s < d {
            elements += per;
        }
    }
    4 * batch as u64 * 2 * elements + 12 * param_oracle(c.band_count, ch)
}
