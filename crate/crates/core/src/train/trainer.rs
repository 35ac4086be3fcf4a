//! The per-fold training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoconfig::PipelineConfig;
use crate::error::{arg_err, Error, Result};
use crate::eval::{confusion, mean_defined, metrics_from_confusion};
use crate::infer::{binarize, tiled_predict};
use crate::net::{batch_from_patches, UNetModel};
use crate::raster::{Blend, CloudMask, MultiBandPatch};

use super::augment::AugmentDraw;
use super::loss::dice_ce_loss;
use super::optim::{poly_lr, Sgd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr0: f32,
    /// Nesterov momentum.
    pub momentum: f32,
    pub weight_decay: f32,
    pub seed: u64,
}

impl TrainHyper {
    pub fn from_config(c: &PipelineConfig, seed: u64) -> Self {
        Self {
            epochs: c.epochs,
            batches_per_epoch: c.batches_per_epoch,
            batch_size: c.batch_size,
            lr0: c.lr0,
            momentum: c.momentum,
            weight_decay: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(arg_err!("lr0 must be positive, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(arg_err!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(arg_err!("batch size and batches per epoch must be positive"));
        }
        if self.weight_decay != 0.0 {
            return Err(arg_err!("weight decay is not supported"));
        }
        Ok(())
    }
}

/// A normalized patch with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub patch: MultiBandPatch,
    pub mask: CloudMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_ji: Option<f64>,
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_ji\n");
    for r in rows {
        let ji = r.val_ji.map(|v| format!("{v:.6}")).unwrap_or_default();
        out.push_str(&format!("{},{:.8e},{:.6},{}\n", r.epoch, r.lr, r.train_loss, ji));
    }
    out
}

/// SplitMix64 finalizer used to derive independent stream seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Patch-mean JI at `tau` over the samples whose JI is defined; `None`
/// when none is.
pub fn validation_ji(model: &UNetModel<f32>, config: &PipelineConfig, val: &[&TrainSample]) -> Result<Option<f64>> {
    let mut jis = Vec::with_capacity(val.len());
    for s in val {
        let map = tiled_predict(&[model], config.patch_size, &s.patch, 0.0, Blend::Uniform)?;
        let pred = binarize(&map, config.threshold)?;
        jis.push(metrics_from_confusion(&confusion(&pred, &s.mask)?).ji);
    }
    Ok(mean_defined(jis).0)
}

fn random_crop<R: Rng>(s: &TrainSample, size: (usize, usize), rng: &mut R) -> Result<(MultiBandPatch, CloudMask)> {
    let (h, w) = s.patch.shape();
    if h < size.0 || w < size.1 {
        return Err(arg_err!(
            "patch {} is {h}x{w}, smaller than the training patch {}x{}",
            s.patch.patch_id,
            size.0,
            size.1
        ));
    }
    if (h, w) == size {
        return Ok((s.patch.clone(), s.mask.clone()));
    }
    let top = rng.random_range(0..=h - size.0);
    let left = rng.random_range(0..=w - size.1);
    let patch = s.patch.crop(s.patch.patch_id.clone(), top, left, size.0, size.1)?;
    let mask = CloudMask::from_fn(size.0, size.1, |y, x| s.mask.get(top + y, left + x));
    Ok((patch, mask))
}

/// Trains one fold from scratch. Each step draws `batch_size` samples with
/// replacement, crops them to the configured patch, augments, and applies
/// one Nesterov step with the poly schedule. Returns the final-epoch model
/// and one curve row per epoch.
pub fn train_fold(
    config: &PipelineConfig,
    train: &[&TrainSample],
    val: &[&TrainSample],
    hyper: &TrainHyper,
    fold: usize,
) -> Result<(UNetModel<f32>, Vec<CurveRow>)> {
    config.validate()?;
    hyper.validate()?;
    let mut model = UNetModel::<f32>::init(config.architecture(), derive_seed(hyper.seed, 2 * fold as u64));
    if hyper.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    if train.is_empty() {
        return Err(arg_err!("fold {fold} has no training samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hyper.seed, 2 * fold as u64 + 1));
    let mut sgd = Sgd::new(&model, hyper.momentum);
    let square = config.patch_size.0 == config.patch_size.1;
    let mut curve = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let lr = poly_lr(epoch, hyper.epochs, hyper.lr0 as f64);
        let mut loss_sum = 0.0;
        for b in 0..hyper.batches_per_epoch {
            let mut patches = Vec::with_capacity(hyper.batch_size);
            let mut masks = Vec::with_capacity(hyper.batch_size);
            for _ in 0..hyper.batch_size {
                let s = train[rng.random_range(0..train.len())];
                let (p, m) = random_crop(s, config.patch_size, &mut rng)?;
                let mut d = AugmentDraw::sample(&mut rng);
                if !square {
                    d.rot &= 2;
                }
                patches.push(d.apply_patch(&p));
                masks.push(d.apply_mask(&m));
            }
            let x = batch_from_patches(&patches.iter().collect::<Vec<_>>())?;
            let (logits, cache) = model.forward(&x)?;
            let (parts, grad) = dice_ce_loss(&logits, &masks.iter().collect::<Vec<_>>())?;
            let loss = parts.total();
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "fold {fold}: non-finite loss at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += loss;
            let grads = model.backward(&cache, &grad)?;
            sgd.step(&mut model, &grads, lr as f32)
                .map_err(|e| Error::Numeric(format!("fold {fold}, epoch {epoch}, batch {b}: {e}")))?;
        }
        let val_ji = if val.is_empty() { None } else { validation_ji(&model, config, val)? };
        let row = CurveRow {
            epoch,
            lr,
            train_loss: loss_sum / hyper.batches_per_epoch as f64,
            val_ji,
        };
        log::info!(
            "fold {fold} epoch {epoch}: lr {:.5} loss {:.4} val JI {}",
            row.lr,
            row.train_loss,
            row.val_ji.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
        );
        curve.push(row);
    }
    Ok((model, curve))
}
