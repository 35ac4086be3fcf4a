use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::raster::CloudMask;

/// Pixel counts with cloud as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn confusion(pred: &CloudMask, gt: &CloudMask) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(arg_err!("prediction {:?} and truth {:?} differ in shape", pred.shape(), gt.shape()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Ratios are `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMetrics {
    pub ji: Option<f64>,
    pub pr: Option<f64>,
    pub re: Option<f64>,
    pub spe: Option<f64>,
    pub oa: Option<f64>,
}

pub const METRIC_NAMES: [&str; 5] = ["ji", "pr", "re", "spe", "oa"];

impl SegmentationMetrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "ji" => self.ji,
            "pr" => self.pr,
            "re" => self.re,
            "spe" => self.spe,
            "oa" => self.oa,
            _ => None,
        }
    }

    pub fn values(&self) -> [Option<f64>; 5] {
        [self.ji, self.pr, self.re, self.spe, self.oa]
    }

    pub fn undefined(&self) -> Vec<&'static str> {
        METRIC_NAMES
            .iter()
            .zip(self.values())
            .filter(|(_, v)| v.is_none())
            .map(|(n, _)| *n)
            .collect()
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics_from_confusion(c: &ConfusionCounts) -> SegmentationMetrics {
    SegmentationMetrics {
        ji: ratio(c.tp, c.tp + c.fp + c.fn_),
        pr: ratio(c.tp, c.tp + c.fp),
        re: ratio(c.tp, c.tp + c.fn_),
        spe: ratio(c.tn, c.tn + c.fp),
        oa: ratio(c.tp + c.tn, c.total()),
    }
}

/// Mean over the defined values, with the count of undefined ones.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut undefined) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => undefined += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), undefined)
}
