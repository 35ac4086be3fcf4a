//! Binary morphology with a 3×3 structuring element and the adaptive
//! open/close rule.
//!
//! Pixels outside the mask are ignored: dilation sees them as clear and
//! erosion as cloud, so the two stay dual under complement and closing an
//! all-cloud mask leaves it unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::raster::CloudMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    /// `taps[dy + 1][dx + 1]`
    pub taps: [[bool; 3]; 3],
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self { taps: [[true; 3]; 3] }
    }
}

impl StructuringElement {
    pub fn new(taps: [[bool; 3]; 3]) -> Result<Self> {
        if !taps[1][1] {
            return Err(arg_err!("structuring element must contain its centre"));
        }
        Ok(Self { taps })
    }

    /// The 4-connected cross.
    pub fn cross() -> Self {
        Self {
            taps: [[false, true, false], [true, true, true], [false, true, false]],
        }
    }

    fn offsets(&self) -> impl Iterator<Item = (isize, isize)> + '_ {
        (0..3).flat_map(move |r| {
            (0..3).filter(move |&c| self.taps[r][c]).map(move |c| (r as isize - 1, c as isize - 1))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphOp {
    Erode,
    Dilate,
    Open,
    Close,
}

fn sweep(m: &CloudMask, se: &StructuringElement, sign: isize, want: bool) -> CloudMask {
    let (h, w) = m.shape();
    CloudMask::from_fn(h, w, |y, x| {
        let hit = se.offsets().any(|(dy, dx)| {
            let (yy, xx) = (y as isize + sign * dy, x as isize + sign * dx);
            yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && m.get(yy as usize, xx as usize) == want
        });
        hit == want
    })
}

/// `1` where some in-bounds `q − b` is cloud.
pub fn dilate(m: &CloudMask, se: &StructuringElement) -> CloudMask {
    sweep(m, se, -1, true)
}

/// `1` where every in-bounds `p + b` is cloud.
pub fn erode(m: &CloudMask, se: &StructuringElement) -> CloudMask {
    sweep(m, se, 1, false)
}

pub fn morph(m: &CloudMask, op: MorphOp, se: &StructuringElement) -> CloudMask {
    match op {
        MorphOp::Erode => erode(m, se),
        MorphOp::Dilate => dilate(m, se),
        MorphOp::Open => dilate(&erode(m, se), se),
        MorphOp::Close => erode(&dilate(m, se), se),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostRule {
    #[default]
    Adaptive,
    Open,
    Close,
    None,
}

impl std::str::FromStr for PostRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Self::Adaptive),
            "open" => Ok(Self::Open),
            "close" => Ok(Self::Close),
            "none" => Ok(Self::None),
            _ => Err(arg_err!("unknown post-processing rule {s:?}")),
        }
    }
}

/// The operation the adaptive rule picks: closing when strictly more than
/// half the pixels are cloud, opening otherwise.
pub fn adaptive_op(m: &CloudMask) -> MorphOp {
    if 2 * m.cloud_count() > m.values().len() {
        MorphOp::Close
    } else {
        MorphOp::Open
    }
}

pub fn adaptive_postprocess(m: &CloudMask) -> CloudMask {
    morph(m, adaptive_op(m), &StructuringElement::default())
}

pub fn apply_rule(m: &CloudMask, rule: PostRule, se: &StructuringElement) -> CloudMask {
    match rule {
        PostRule::Adaptive => morph(m, adaptive_op(m), se),
        PostRule::Open => morph(m, MorphOp::Open, se),
        PostRule::Close => morph(m, MorphOp::Close, se),
        PostRule::None => m.clone(),
    }
}
