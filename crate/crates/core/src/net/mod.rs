//! The compact U-Net: layers, forward and backward passes, initialization
//! and checkpoints.

pub mod arch;
mod checkpoint;
mod layers;
mod model;
mod real;

pub use arch::{Architecture, LayerKind, LayerSpec};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointIndex, TensorEntry};
pub use layers::{
    concat_channels, leaky_relu, leaky_relu_backward, split_channels, Act, Conv2d, InstanceNorm,
    NormCache, UpConv, LEAKY_SLOPE, NORM_EPS,
};
pub use model::{fan_in, init_params, ConvBlock, DecoderStage, ForwardCache, LayerGradients, UNetModel};
pub use real::{MatRef, Real};

use crate::error::{arg_err, Result};
use crate::raster::MultiBandPatch;

/// Stacks equally shaped patches into an N×B×H×W batch.
pub fn batch_from_patches(patches: &[&MultiBandPatch]) -> Result<Act<f32>> {
    let first = patches.first().ok_or_else(|| arg_err!("empty batch"))?;
    let (b, h, w) = (first.bands(), first.height(), first.width());
    let mut data = Vec::with_capacity(patches.len() * b * h * w);
    for p in patches {
        if (p.bands(), p.height(), p.width()) != (b, h, w) {
            return Err(arg_err!("patch {} shape differs within batch", p.patch_id));
        }
        data.extend_from_slice(p.values());
    }
    Ok(Act::from_vec(patches.len(), b, h, w, data))
}
