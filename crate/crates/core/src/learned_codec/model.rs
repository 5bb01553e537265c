use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::entropy::EntropyModel;
use super::{CodecError, Result};
use crate::tensor::{Activation, ConvLayerParams, Tensor};

/// Shape and behaviour of one layer of the codec.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bias: bool,
    pub activation: Activation,
    pub transpose: bool,
}

impl LayerSpec {
    const fn conv(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        bias: bool,
        activation: Activation,
        transpose: bool,
    ) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel,
            stride: 2,
            bias,
            activation,
            transpose,
        }
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let k = self.kernel;
        [self.out_channels, self.in_channels, k, k, k]
    }

    /// Output shape `[C, D, H, W]` for an input of shape `input`, without
    /// running the layer.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        if input[0] != self.in_channels {
            return Err(CodecError::Shape(format!(
                "layer expects {} channels, input has {}",
                self.in_channels, input[0]
            )));
        }
        let s = self.stride;
        let side = |d: usize| if self.transpose { d * s } else { d.div_ceil(s) };
        Ok([
            self.out_channels,
            side(input[1]),
            side(input[2]),
            side(input[3]),
        ])
    }

    /// Inputs feeding one output value. A transposed layer with stride `s`
    /// reaches each output from roughly `k^3 / s^3` taps per channel.
    fn fan_in(&self) -> usize {
        let taps = self.kernel.pow(3);
        let taps = if self.transpose {
            (taps / self.stride.pow(3)).max(1)
        } else {
            taps
        };
        self.in_channels * taps
    }
}

/// The six layers for `n` feature maps: three analysis convolutions
/// followed by three synthesis transposed convolutions.
/// Latent shape for a single-channel grid of spatial size `dims`.
pub fn latent_shape(n: usize, dims: [usize; 3]) -> Result<[usize; 4]> {
    layer_specs(n)[..3]
        .iter()
        .try_fold([1, dims[0], dims[1], dims[2]], |shape, spec| {
            spec.output_shape(shape)
        })
}

/// Score shape the synthesis transform produces from a latent of `latent`.
pub fn reconstruction_shape(n: usize, latent: [usize; 4]) -> Result<[usize; 4]> {
    layer_specs(n)[3..]
        .iter()
        .try_fold(latent, |shape, spec| spec.output_shape(shape))
}

pub fn layer_specs(n: usize) -> [LayerSpec; 6] {
    use Activation::{None as Linear, Relu};
    [
        LayerSpec::conv(n, 1, 9, true, Relu, false),
        LayerSpec::conv(n, n, 5, true, Relu, false),
        LayerSpec::conv(n, n, 5, false, Linear, false),
        LayerSpec::conv(n, n, 5, true, Relu, true),
        LayerSpec::conv(n, n, 5, true, Relu, true),
        LayerSpec::conv(1, n, 9, true, Relu, true),
    ]
}

/// First 16 bytes of a SHA-256 over the layer specs and the single
/// precision parameter values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelId(pub [u8; 16]);

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|b| write!(f, "{b:02x}"))
    }
}

/// Factor applied to the He-uniform weights of the output layer at init.
pub const OUTPUT_WEIGHT_SCALE: f64 = 0.1;
/// Initial bias of the output layer.
pub const OUTPUT_BIAS: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    n: usize,
    pub analysis: [ConvLayerParams; 3],
    pub synthesis: [ConvLayerParams; 3],
    pub entropy: EntropyModel,
}

impl ModelParams {
    /// He-uniform weights drawn from `seed`, zero biases, and a unit-scale
    /// zero-location entropy model. The output layer is scaled down to
    /// [`OUTPUT_WEIGHT_SCALE`] and starts at bias [`OUTPUT_BIAS`], so the
    /// first scores sit just above zero instead of being huge or dead.
    /// Values are rounded to single precision.
    pub fn init(n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::build(n, |spec| {
            let bound = (6.0 / spec.fan_in() as f64).sqrt();
            let numel = spec.weight_shape().iter().product();
            (0..numel).map(|_| rng.gen_range(-bound..bound)).collect()
        })?;
        let out = &mut params.synthesis[2];
        out.weights
            .data_mut()
            .iter_mut()
            .for_each(|v| *v *= OUTPUT_WEIGHT_SCALE);
        if let Some(b) = out.bias.as_mut() {
            b.data_mut().iter_mut().for_each(|v| *v = OUTPUT_BIAS);
        }
        params.snap_to_f32();
        Ok(params)
    }

    /// All weights and biases zero.
    pub fn zeros(n: usize) -> Result<Self> {
        Self::build(n, |spec| vec![0.0; spec.weight_shape().iter().product()])
    }

    fn build(n: usize, mut weights: impl FnMut(&LayerSpec) -> Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(CodecError::Argument(
                "feature map count must be positive".into(),
            ));
        }
        let mut layers = Vec::with_capacity(6);
        for spec in layer_specs(n) {
            let w = Tensor::new(&spec.weight_shape(), weights(&spec))?;
            let b = spec.bias.then(|| Tensor::zeros(&[spec.out_channels]));
            layers.push(ConvLayerParams::new(w, b, spec.stride, spec.activation)?);
        }
        let synthesis: [ConvLayerParams; 3] = layers.split_off(3).try_into().unwrap();
        let analysis: [ConvLayerParams; 3] = layers.try_into().unwrap();
        let mut params = Self {
            n,
            analysis,
            synthesis,
            entropy: EntropyModel::new(n),
        };
        params.snap_to_f32();
        Ok(params)
    }

    /// Reassembles parameters from tensors in [`Self::tensors`] order.
    pub fn from_tensors(n: usize, tensors: Vec<Tensor>) -> Result<Self> {
        let mut template = Self::zeros(n)?;
        let expected: Vec<Vec<usize>> = template
            .tensors()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        if tensors.len() != expected.len() {
            return Err(CodecError::Shape(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (i, (slot, t)) in template.tensors_mut().into_iter().zip(tensors).enumerate() {
            if t.shape() != expected[i] {
                return Err(CodecError::Shape(format!(
                    "parameter {i} has shape {:?}, expected {:?}",
                    t.shape(),
                    expected[i]
                )));
            }
            *slot = t;
        }
        Ok(template)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Every trainable tensor in a fixed order: per layer weights then bias,
    /// analysis before synthesis, then entropy location and raw scale.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(13);
        for layer in self.analysis.iter().chain(&self.synthesis) {
            out.push(&layer.weights);
            out.extend(layer.bias.as_ref());
        }
        out.push(&self.entropy.loc);
        out.push(&self.entropy.raw_scale);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(13);
        for layer in self.analysis.iter_mut().chain(&mut self.synthesis) {
            out.push(&mut layer.weights);
            out.extend(layer.bias.as_mut());
        }
        out.push(&mut self.entropy.loc);
        out.push(&mut self.entropy.raw_scale);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Rounds every value to the nearest `f32`, which is what checkpoints
    /// store.
    pub fn snap_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn model_id(&self) -> ModelId {
        let mut h = Sha256::new();
        h.update(b"pcgc-model");
        h.update((self.n as u32).to_le_bytes());
        for spec in layer_specs(self.n) {
            h.update(spec_bytes(&spec));
        }
        for t in self.tensors() {
            for v in t.data() {
                h.update((*v as f32).to_le_bytes());
            }
        }
        let digest = h.finalize();
        ModelId(digest[..16].try_into().unwrap())
    }
}

pub(crate) fn spec_bytes(spec: &LayerSpec) -> [u8; 13] {
    let mut b = [0u8; 13];
    b[0..4].copy_from_slice(&(spec.out_channels as u32).to_le_bytes());
    b[4..8].copy_from_slice(&(spec.in_channels as u32).to_le_bytes());
    b[8] = spec.kernel as u8;
    b[9] = spec.stride as u8;
    b[10] = spec.bias as u8;
    b[11] = (spec.activation == Activation::Relu) as u8;
    b[12] = spec.transpose as u8;
    b
}
