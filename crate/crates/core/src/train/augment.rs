//! Flip and right-angle rotation augmentation. Pixels are permuted, never
//! interpolated, so masks stay binary and class balance is unchanged.

use rand::Rng;

use crate::error::{arg_err, Result};
use crate::raster::{CloudMask, MultiBandPatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentDraw {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub rot: u8,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
            rot: rng.random_range(0..4u8),
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        if self.rot % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source pixel for output pixel `(y, x)` of an `h`×`w` input.
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        // undo the rotation, then the flips
        let (mut sy, mut sx) = match self.rot % 4 {
            0 => (y, x),
            1 => (x, w - 1 - y),
            2 => (h - 1 - y, w - 1 - x),
            _ => (h - 1 - x, y),
        };
        if self.vflip {
            sy = h - 1 - sy;
        }
        if self.hflip {
            sx = w - 1 - sx;
        }
        (sy, sx)
    }

    pub fn apply_plane<V: Copy>(&self, src: &[V], h: usize, w: usize) -> Vec<V> {
        let (oh, ow) = self.out_dims(h, w);
        let mut out = Vec::with_capacity(src.len());
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = self.source(y, x, h, w);
                out.push(src[sy * w + sx]);
            }
        }
        out
    }

    pub fn apply_patch(&self, p: &MultiBandPatch) -> MultiBandPatch {
        let (h, w) = p.shape();
        let (oh, ow) = self.out_dims(h, w);
        let planes = (0..p.bands()).map(|b| self.apply_plane(p.band(b), h, w)).collect();
        MultiBandPatch::from_planes(p.patch_id.clone(), p.scene_id.clone(), oh, ow, planes)
            .expect("permutation keeps a valid patch")
    }

    pub fn apply_mask(&self, m: &CloudMask) -> CloudMask {
        let (h, w) = m.shape();
        let (oh, ow) = self.out_dims(h, w);
        CloudMask::new(oh, ow, self.apply_plane(m.values(), h, w)).expect("permutation keeps a binary mask")
    }
}

/// Draws one transform and applies it to both patch and mask.
pub fn augment<R: Rng + ?Sized>(
    patch: &MultiBandPatch,
    mask: &CloudMask,
    rng: &mut R,
) -> Result<(MultiBandPatch, CloudMask)> {
    if patch.shape() != mask.shape() {
        return Err(arg_err!(
            "augment: patch {:?} and mask {:?} differ",
            patch.shape(),
            mask.shape()
        ));
    }
    let d = AugmentDraw::sample(rng);
    Ok((d.apply_patch(patch), d.apply_mask(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize) -> Vec<u32> {
        (0..(h * w) as u32).collect()
    }

    #[test]
    fn identity_draw() {
        let src = grid(3, 4);
        assert_eq!(AugmentDraw::identity().apply_plane(&src, 3, 4), src);
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        // [0 1]      [1 3]
        // [2 3]  ->  [0 2]
        let d = AugmentDraw { rot: 1, ..Default::default() };
        assert_eq!(d.apply_plane(&[0, 1, 2, 3], 2, 2), vec![1, 3, 0, 2]);
    }

    #[test]
    fn four_quarter_turns_compose_to_identity() {
        let src = grid(3, 5);
        let d = AugmentDraw { rot: 1, ..Default::default() };
        let mut cur = src.clone();
        let (mut h, mut w) = (3, 5);
        for _ in 0..4 {
            cur = d.apply_plane(&cur, h, w);
            (h, w) = (w, h);
        }
        assert_eq!(cur, src);
    }

    #[test]
    fn double_hflip() {
        let src = grid(4, 6);
        let d = AugmentDraw { hflip: true, ..Default::default() };
        assert_eq!(d.apply_plane(&d.apply_plane(&src, 4, 6), 4, 6), src);
    }
}
