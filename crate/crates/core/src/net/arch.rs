//! Static description of the U-Net topology: layer list, parameter counts
//! and the activation-memory model used by the configurator.

use serde::{Deserialize, Serialize};

/// Input bands, per-stage channel widths (`channels.len() - 1` downsamplings)
/// and output classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// 3×3 convolution, zero padding 1.
    Conv3x3 { stride: usize },
    /// 2×2 transposed convolution with stride 2.
    UpConv2x2,
    /// 1×1 convolution.
    Conv1x1,
    /// Per-channel affine after instance normalization.
    InstanceNorm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
}

impl LayerSpec {
    pub fn weight_count(&self) -> u64 {
        let (cin, cout) = (self.cin as u64, self.cout as u64);
        match self.kind {
            LayerKind::Conv3x3 { .. } => cin * cout * 9,
            LayerKind::UpConv2x2 => cin * cout * 4,
            LayerKind::Conv1x1 => cin * cout,
            LayerKind::InstanceNorm => cout,
        }
    }

    /// Conv bias, or the norm shift.
    pub fn bias_count(&self) -> u64 {
        self.cout as u64
    }

    pub fn param_count(&self) -> u64 {
        self.weight_count() + self.bias_count()
    }
}

impl Architecture {
    pub fn new(in_channels: usize, channels: Vec<usize>) -> Self {
        Self {
            in_channels,
            channels,
            n_classes: 2,
        }
    }

    /// Number of stride-2 downsamplings.
    pub fn depth(&self) -> usize {
        self.channels.len() - 1
    }

    /// Every parameterised layer in forward order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let mut push = |name: String, kind, cin, cout| out.push(LayerSpec { name, kind, cin, cout });
        let d = self.depth();
        for s in 0..=d {
            let cin = if s == 0 { self.in_channels } else { self.channels[s - 1] };
            let c = self.channels[s];
            let stride = if s == 0 { 1 } else { 2 };
            push(format!("enc{s}.conv0"), LayerKind::Conv3x3 { stride }, cin, c);
            push(format!("enc{s}.norm0"), LayerKind::InstanceNorm, c, c);
            push(format!("enc{s}.conv1"), LayerKind::Conv3x3 { stride: 1 }, c, c);
            push(format!("enc{s}.norm1"), LayerKind::InstanceNorm, c, c);
        }
        for s in (0..d).rev() {
            let c = self.channels[s];
            push(format!("dec{s}.up"), LayerKind::UpConv2x2, self.channels[s + 1], c);
            push(format!("dec{s}.conv0"), LayerKind::Conv3x3 { stride: 1 }, 2 * c, c);
            push(format!("dec{s}.norm0"), LayerKind::InstanceNorm, c, c);
            push(format!("dec{s}.conv1"), LayerKind::Conv3x3 { stride: 1 }, c, c);
            push(format!("dec{s}.norm1"), LayerKind::InstanceNorm, c, c);
        }
        push("head".into(), LayerKind::Conv1x1, self.channels[0], self.n_classes);
        out
    }

    pub fn param_count(&self) -> u64 {
        self.layers().iter().map(LayerSpec::param_count).sum()
    }

    /// Σ over encoder stages 0..=d and decoder stages 0..d of
    /// `H_s·W_s·C_s·2` (two conv activations per stage).
    pub fn activation_elements(&self, patch: (usize, usize)) -> u64 {
        let d = self.depth();
        let stage = |s: usize| -> u64 {
            let h = (patch.0 >> s) as u64;
            let w = (patch.1 >> s) as u64;
            h * w * self.channels[s] as u64 * 2
        };
        let enc: u64 = (0..=d).map(stage).sum();
        let dec: u64 = (0..d).map(stage).sum();
        enc + dec
    }
}

/// Backprop storage multiplier on forward activations.
pub const BACKPROP_OVERHEAD: u64 = 2;
/// Bytes per parameter for weights, gradients and momentum (3 × f32).
pub const BYTES_PER_PARAM: u64 = 12;

pub fn activation_bytes(arch: &Architecture, patch: (usize, usize), batch: usize) -> u64 {
    4 * batch as u64 * BACKPROP_OVERHEAD * arch.activation_elements(patch)
}

/// Training-memory model: activations plus optimizer state.
pub fn estimate_training_bytes(arch: &Architecture, patch: (usize, usize), batch: usize) -> u64 {
    activation_bytes(arch, patch, batch) + BYTES_PER_PARAM * arch.param_count()
}
