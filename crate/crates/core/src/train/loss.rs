//! Equal-weight cross-entropy + soft-Dice loss on two-class logits.

use crate::error::{arg_err, Result};
use crate::net::{Act, Real};
use crate::raster::CloudMask;

pub const DICE_SMOOTH: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// Mean pixel cross-entropy.
    pub ce: f64,
    /// Soft Dice coefficient on the cloud channel, over the whole batch.
    pub dice: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        0.5 * self.ce + 0.5 * (1.0 - self.dice)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss and its gradient with respect to the logits. `targets` holds one
/// 0/1 label per pixel, sample-major, matching the logit layout.
pub fn dice_ce_loss_raw<T: Real>(logits: &Act<T>, targets: &[u8]) -> Result<(LossParts, Act<T>)> {
    if logits.c != 2 {
        return Err(arg_err!("loss expects 2 logit channels, got {}", logits.c));
    }
    let plane = logits.plane();
    let m = logits.n * plane;
    if targets.len() != m {
        return Err(arg_err!("loss: {} targets for {} pixels", targets.len(), m));
    }
    let mut p = vec![0.0f64; m];
    let mut ce = 0.0f64;
    let (mut sp, mut sg, mut inter) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..logits.n {
        let s = logits.sample(i);
        for j in 0..plane {
            let d = s[plane + j].to_f64().unwrap() - s[j].to_f64().unwrap();
            let g = targets[i * plane + j];
            if g > 1 {
                return Err(arg_err!("loss target {g} is not binary"));
            }
            let pi = sigmoid(d);
            // -ln p(true class)
            ce += if g == 1 { softplus(-d) } else { softplus(d) };
            let gf = g as f64;
            sp += pi;
            sg += gf;
            inter += pi * gf;
            p[i * plane + j] = pi;
        }
    }
    let mf = m as f64;
    let denom = sp + sg + DICE_SMOOTH;
    let dice = (2.0 * inter + DICE_SMOOTH) / denom;
    let parts = LossParts { ce: ce / mf, dice };

    let mut grad = Act::zeros(logits.n, 2, logits.h, logits.w);
    for i in 0..logits.n {
        let gs = grad.sample_mut(i);
        for j in 0..plane {
            let k = i * plane + j;
            let (pi, gf) = (p[k], targets[k] as f64);
            let dd_dp = (2.0 * gf * denom - (2.0 * inter + DICE_SMOOTH)) / (denom * denom);
            let dl_dp = -0.5 * dd_dp;
            let dz = 0.5 * (pi - gf) / mf + dl_dp * pi * (1.0 - pi);
            gs[plane + j] = T::lit(dz);
            gs[j] = T::lit(-dz);
        }
    }
    Ok((parts, grad))
}

/// Loss for a batch of logits against one mask per sample.
pub fn dice_ce_loss<T: Real>(logits: &Act<T>, gt: &[&CloudMask]) -> Result<(LossParts, Act<T>)> {
    if gt.len() != logits.n {
        return Err(arg_err!("loss: {} masks for batch of {}", gt.len(), logits.n));
    }
    let mut targets = Vec::with_capacity(logits.n * logits.plane());
    for m in gt {
        if m.shape() != (logits.h, logits.w) {
            return Err(arg_err!(
                "loss: mask {:?} does not match logits {}x{}",
                m.shape(),
                logits.h,
                logits.w
            ));
        }
        targets.extend_from_slice(m.values());
    }
    dice_ce_loss_raw(logits, &targets)
}
