use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{arg_err, Error, Result};

use super::arch::{Architecture, LayerKind};
use super::layers::{
    concat_channels, leaky_relu, leaky_relu_backward, split_channels, Act, Conv2d, InstanceNorm,
    NormCache, UpConv,
};
use super::real::Real;

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

/// conv3×3 → instance norm → leaky ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub norm: InstanceNorm<T>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    input: Act<T>,
    norm: NormCache<T>,
    /// Norm output, i.e. the leaky ReLU input.
    pre_act: Act<T>,
}

impl<T: Real> ConvBlock<T> {
    fn zeros(cin: usize, cout: usize, stride: usize) -> Self {
        Self {
            conv: Conv2d::zeros(cin, cout, 3, stride),
            norm: InstanceNorm::zeros(cout),
        }
    }

    fn forward(&self, x: &Act<T>, keep: bool) -> (Act<T>, Option<BlockCache<T>>) {
        let z = self.conv.forward(x);
        let (pre, norm) = self.norm.forward(&z);
        let mut y = pre.clone();
        leaky_relu(&mut y);
        let cache = keep.then(|| BlockCache {
            input: x.clone(),
            norm,
            pre_act: pre,
        });
        (y, cache)
    }

    fn backward(&self, cache: &BlockCache<T>, mut dy: Act<T>, grad: &mut ConvBlock<T>) -> Act<T> {
        leaky_relu_backward(&cache.pre_act, &mut dy);
        let dz = self.norm.backward(&cache.norm, &dy, &mut grad.norm);
        self.conv.backward(&cache.input, &dz, &mut grad.conv)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStage<T> {
    pub up: UpConv<T>,
    pub blocks: [ConvBlock<T>; 2],
}

/// The compact U-Net. Encoder stage 0 keeps full resolution; every further
/// stage opens with a stride-2 conv. Each decoder stage upsamples with a 2×2
/// transposed conv, concatenates `[upsampled, skip]` and applies two conv
/// blocks. A 1×1 head emits two logits (clear, cloud).
#[derive(Debug, Clone)]
pub struct UNetModel<T = f32> {
    arch: Architecture,
    pub encoder: Vec<[ConvBlock<T>; 2]>,
    /// Deepest first: `decoder[0]` produces stage `d-1`.
    pub decoder: Vec<DecoderStage<T>>,
    pub head: Conv2d<T>,
    id: u64,
    generation: u64,
}

impl<T: Real> PartialEq for UNetModel<T> {
    /// Architecture and parameters; identity and generation are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.encoder == other.encoder
            && self.decoder == other.decoder
            && self.head == other.head
    }
}

/// Everything the backward pass needs, tagged with the model state it came
/// from.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    model_id: u64,
    generation: u64,
    encoder: Vec<[BlockCache<T>; 2]>,
    decoder: Vec<(Act<T>, [BlockCache<T>; 2])>,
    head_input: Act<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Sign of every leaky ReLU input, in forward order. Two forward passes
    /// with equal patterns lie on the same linear piece of every activation.
    pub fn activation_signs(&self) -> Vec<bool> {
        let blocks = self
            .encoder
            .iter()
            .flat_map(|b| b.iter())
            .chain(self.decoder.iter().flat_map(|(_, b)| b.iter()));
        blocks
            .flat_map(|c| c.pre_act.data.iter().map(|v| *v > T::zero()))
            .collect()
    }
}

/// Parameter gradients, laid out exactly like the model.
#[derive(Debug, Clone)]
pub struct LayerGradients<T = f32> {
    pub inner: UNetModel<T>,
}

impl<T: Real> LayerGradients<T> {
    pub fn zeros_like(m: &UNetModel<T>) -> Self {
        Self {
            inner: UNetModel::zeros(m.arch.clone()),
        }
    }

    pub fn slices(&self) -> Vec<&[T]> {
        self.inner.param_slices()
    }

    pub fn names(&self) -> Vec<String> {
        self.inner.param_names()
    }

    pub fn scale(&mut self, k: T) {
        for s in self.inner.param_slices_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| *v == T::zero()))
    }
}

impl<T: Real> UNetModel<T> {
    /// Every parameter zero, including norm scales.
    pub fn zeros(arch: Architecture) -> Self {
        let d = arch.depth();
        let encoder = (0..=d)
            .map(|s| {
                let cin = if s == 0 { arch.in_channels } else { arch.channels[s - 1] };
                let c = arch.channels[s];
                [ConvBlock::zeros(cin, c, if s == 0 { 1 } else { 2 }), ConvBlock::zeros(c, c, 1)]
            })
            .collect();
        let decoder = (0..d)
            .rev()
            .map(|s| {
                let c = arch.channels[s];
                DecoderStage {
                    up: UpConv::zeros(arch.channels[s + 1], c),
                    blocks: [ConvBlock::zeros(2 * c, c, 1), ConvBlock::zeros(c, c, 1)],
                }
            })
            .collect();
        let head = Conv2d::zeros(arch.channels[0], arch.n_classes, 1, 1);
        Self {
            arch,
            encoder,
            decoder,
            head,
            id: NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        }
    }

    /// He-normal fan-in weights, zero biases, unit norm scales, zero shifts.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut m = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = m.arch.layers();
        let mut slices = m.param_slices_mut().into_iter();
        for layer in &layers {
            let w = slices.next().expect("weight slice per layer");
            let _bias = slices.next().expect("bias slice per layer");
            if layer.kind == LayerKind::InstanceNorm {
                w.iter_mut().for_each(|v| *v = T::one());
            } else {
                let std = (2.0 / fan_in(layer.kind, layer.cin) as f64).sqrt();
                for v in w.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = T::lit(z * std);
                }
            }
        }
        m
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Marks the parameters as changed; outstanding caches become stale.
    pub fn bump_generation(&mut self) {
        self.generation += 1;
    }

    pub fn param_names(&self) -> Vec<String> {
        self.arch
            .layers()
            .into_iter()
            .flat_map(|l| [format!("{}.weight", l.name), format!("{}.bias", l.name)])
            .collect()
    }

    /// Parameter tensors in [`Architecture::layers`] order, weight then bias
    /// (norm scale then shift).
    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        fn block<'a, T>(out: &mut Vec<&'a [T]>, b: &'a ConvBlock<T>) {
            out.extend([&b.conv.weight[..], &b.conv.bias[..], &b.norm.scale[..], &b.norm.shift[..]]);
        }
        for stage in &self.encoder {
            stage.iter().for_each(|b| block(&mut out, b));
        }
        for dec in &self.decoder {
            out.extend([&dec.up.weight[..], &dec.up.bias[..]]);
            dec.blocks.iter().for_each(|b| block(&mut out, b));
        }
        out.extend([&self.head.weight[..], &self.head.bias[..]]);
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        fn block<'a, T>(out: &mut Vec<&'a mut [T]>, b: &'a mut ConvBlock<T>) {
            out.push(&mut b.conv.weight[..]);
            out.push(&mut b.conv.bias[..]);
            out.push(&mut b.norm.scale[..]);
            out.push(&mut b.norm.shift[..]);
        }
        for stage in &mut self.encoder {
            stage.iter_mut().for_each(|b| block(&mut out, b));
        }
        for dec in &mut self.decoder {
            out.push(&mut dec.up.weight[..]);
            out.push(&mut dec.up.bias[..]);
            dec.blocks.iter_mut().for_each(|b| block(&mut out, b));
        }
        out.push(&mut self.head.weight[..]);
        out.push(&mut self.head.bias[..]);
        self.generation += 1;
        out
    }

    pub fn param_count(&self) -> u64 {
        self.param_slices().iter().map(|s| s.len() as u64).sum()
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> UNetModel<U> {
        let mut out = UNetModel::<U>::zeros(self.arch.clone());
        for (dst, src) in out.param_slices_mut().into_iter().zip(self.param_slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::from_f64(s.to_f64().unwrap()).unwrap();
            }
        }
        out
    }

    pub fn check_input(&self, x: &Act<T>) -> Result<()> {
        if x.c != self.arch.in_channels {
            return Err(arg_err!(
                "input has {} bands, model expects {}",
                x.c,
                self.arch.in_channels
            ));
        }
        let unit = 1usize << self.arch.depth();
        if !x.h.is_multiple_of(unit) || !x.w.is_multiple_of(unit) || x.h == 0 || x.w == 0 {
            return Err(arg_err!(
                "input {}x{} not divisible by 2^{}",
                x.h,
                x.w,
                self.arch.depth()
            ));
        }
        if x.n == 0 {
            return Err(arg_err!("empty batch"));
        }
        Ok(())
    }

    /// Logits (N×2×H×W) without keeping activations.
    pub fn predict_logits(&self, x: &Act<T>) -> Result<Act<T>> {
        self.check_input(x)?;
        Ok(self.run(x, false).0)
    }

    pub fn forward(&self, x: &Act<T>) -> Result<(Act<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let (logits, cache) = self.run(x, true);
        Ok((logits, cache.expect("cache requested")))
    }

    fn run(&self, x: &Act<T>, keep: bool) -> (Act<T>, Option<ForwardCache<T>>) {
        let mut enc_cache = Vec::new();
        let mut skips = Vec::new();
        let mut cur = x.clone();
        for stage in &self.encoder {
            let (a, c0) = stage[0].forward(&cur, keep);
            let (b, c1) = stage[1].forward(&a, keep);
            if keep {
                enc_cache.push([c0.unwrap(), c1.unwrap()]);
            }
            skips.push(b.clone());
            cur = b;
        }
        skips.pop();
        let mut dec_cache = Vec::new();
        for dec in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder stage");
            let up = dec.up.forward(&cur);
            let cat = concat_channels(&up, &skip);
            let (a, c0) = dec.blocks[0].forward(&cat, keep);
            let (b, c1) = dec.blocks[1].forward(&a, keep);
            if keep {
                dec_cache.push((cur.clone(), [c0.unwrap(), c1.unwrap()]));
            }
            cur = b;
        }
        let logits = self.head.forward(&cur);
        let cache = keep.then_some(ForwardCache {
            model_id: self.id,
            generation: self.generation,
            encoder: enc_cache,
            decoder: dec_cache,
            head_input: cur,
        });
        (logits, cache)
    }

    /// Exact parameter gradients for upstream logit gradients.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Act<T>) -> Result<LayerGradients<T>> {
        if cache.model_id != self.id || cache.generation != self.generation {
            return Err(Error::Contract(
                "forward cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        let hi = &cache.head_input;
        if (grad_logits.n, grad_logits.c, grad_logits.h, grad_logits.w) != (hi.n, self.arch.n_classes, hi.h, hi.w) {
            return Err(arg_err!("logit gradient shape does not match the forward pass"));
        }
        let mut grads = LayerGradients::zeros_like(self);
        let g = &mut grads.inner;
        let mut dcur = self.head.backward(hi, grad_logits, &mut g.head);

        let d = self.arch.depth();
        // gradient flowing into each encoder stage output via its skip
        let mut skip_grads: Vec<Option<Act<T>>> = vec![None; d + 1];
        for (i, dec) in self.decoder.iter().enumerate().rev() {
            let s = d - 1 - i;
            let (up_input, caches) = &cache.decoder[i];
            let da = dec.blocks[1].backward(&caches[1], dcur, &mut g.decoder[i].blocks[1]);
            let dcat = dec.blocks[0].backward(&caches[0], da, &mut g.decoder[i].blocks[0]);
            let (dup, dskip) = split_channels(&dcat, self.arch.channels[s]);
            skip_grads[s] = Some(dskip);
            dcur = dec.up.backward(up_input, &dup, &mut g.decoder[i].up);
        }
        for s in (0..=d).rev() {
            if let Some(extra) = skip_grads[s].take() {
                dcur.data.iter_mut().zip(&extra.data).for_each(|(a, &b)| *a += b);
            }
            let caches = &cache.encoder[s];
            let da = self.encoder[s][1].backward(&caches[1], dcur, &mut g.encoder[s][1]);
            dcur = self.encoder[s][0].backward(&caches[0], da, &mut g.encoder[s][0]);
        }
        Ok(grads)
    }
}

/// Inputs seen by one output unit.
pub fn fan_in(kind: LayerKind, cin: usize) -> usize {
    match kind {
        LayerKind::Conv3x3 { .. } => cin * 9,
        LayerKind::UpConv2x2 | LayerKind::Conv1x1 | LayerKind::InstanceNorm => cin,
    }
}

pub fn init_params(arch: Architecture, seed: u64) -> UNetModel<f32> {
    UNetModel::init(arch, seed)
}
