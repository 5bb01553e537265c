use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::entropy::record_rate;
use super::focal::record_focal;
use super::{CodecError, ModelParams, Result};
use crate::geometry::VoxelGrid;
use crate::tensor::{
    adam_step, conv3d, conv3d_transpose, elementwise, Activation, AdamState, ConvLayerParams,
    Elementwise, Tape, Tensor, Var,
};

/// Quantizer behaviour: additive uniform noise while training, rounding
/// (ties to even) at evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    Train { seed: u64 },
    Eval,
}

fn noise(seed: u64) -> Elementwise {
    Elementwise::AddNoise {
        lo: -0.5,
        hi: 0.5,
        seed,
    }
}

pub fn quantize(y: &Tensor, mode: QuantMode) -> Tensor {
    let kind = match mode {
        QuantMode::Train { seed } => noise(seed),
        QuantMode::Eval => Elementwise::Round,
    };
    elementwise(y, kind).expect("quantizer arguments are valid")
}

fn check_input(x: &Tensor) -> Result<()> {
    match x.shape() {
        [1, d, h, w] if [d, h, w].iter().all(|&&v| v % 8 == 0) => Ok(()),
        s => Err(CodecError::Shape(format!(
            "codec input must be [1, D, H, W] with sides divisible by 8, got {s:?}"
        ))),
    }
}

/// `[1, r, r, r]` occupancy to the `[N, r/8, r/8, r/8]` latent.
pub fn analysis(x: &Tensor, params: &ModelParams) -> Result<Tensor> {
    check_input(x)?;
    let mut h = conv3d(x, &params.analysis[0])?;
    for layer in &params.analysis[1..] {
        h = conv3d(&h, layer)?;
    }
    Ok(h)
}

/// Quantized latent to `[1, 8D, 8H, 8W]` occupancy scores.
pub fn synthesis(y_hat: &Tensor, params: &ModelParams) -> Result<Tensor> {
    if y_hat.shape().len() != 4 || y_hat.shape()[0] != params.n() {
        return Err(CodecError::Shape(format!(
            "latent of shape {:?} does not match a model with {} channels",
            y_hat.shape(),
            params.n()
        )));
    }
    let mut h = conv3d_transpose(y_hat, &params.synthesis[0])?;
    for layer in &params.synthesis[1..] {
        h = conv3d_transpose(&h, layer)?;
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub resolution: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            alpha: 0.9,
            gamma: 2.0,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            steps: 1000,
            seed: 0,
            resolution: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CodecError::Argument(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return bad("Adam needs lr > 0 and betas in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.resolution == 0 || !self.resolution.is_multiple_of(8) {
            return bad(format!(
                "resolution must be a positive multiple of 8, got {}",
                self.resolution
            ));
        }
        Ok(())
    }

    /// Fresh optimizer state for `params`.
    pub fn optimizer(&self, params: &ModelParams) -> AdamState {
        AdamState::new(&params.tensors(), self.lr, self.beta1, self.beta2, self.eps)
    }
}

/// Batch-mean distortion `d` (focal loss per cloud), rate `r` (bits per
/// occupied input voxel) and `l = lambda * d + r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub d: f64,
    pub r: f64,
    pub l: f64,
}

/// Seed of the quantization noise for sample `index` of step `step`.
fn noise_seed(seed: u64, step: u64, index: usize) -> u64 {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&(index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key).next_u64()
}

fn record_layer(
    tape: &mut Tape,
    x: Var,
    w: Var,
    b: Option<Var>,
    layer: &ConvLayerParams,
    transpose: bool,
) -> Result<Var> {
    let h = if transpose {
        tape.conv3d_transpose(x, w, b, layer.stride)?
    } else {
        tape.conv3d(x, w, b, layer.stride)?
    };
    Ok(match layer.activation {
        Activation::Relu => tape.relu(h),
        Activation::None => h,
    })
}

struct SampleResult {
    d: f64,
    r: f64,
    grads: Vec<Vec<f64>>,
}

/// Forward and backward pass of one grid. Gradients are of the sample's
/// own `lambda * D + R`.
fn sample(
    grid: &VoxelGrid,
    params: &ModelParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<SampleResult> {
    if grid.is_empty() {
        return Err(CodecError::Argument("cannot train on an empty grid".into()));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|t| tape.param(t.clone()))
        .collect();
    let mut next = vars.iter().copied();
    let mut h = tape.constant(grid.to_tensor());
    check_input(tape.value(h))?;
    let mut rate_var = None;
    for (i, layer) in params.analysis.iter().chain(&params.synthesis).enumerate() {
        let w = next.next().unwrap();
        let b = layer.bias.as_ref().map(|_| next.next().unwrap());
        h = record_layer(&mut tape, h, w, b, layer, i >= 3)?;
        if i == 2 {
            // Latent: quantize with noise and charge its rate.
            h = tape.elementwise(h, noise(seed))?;
            let (loc, raw) = (vars[vars.len() - 2], vars[vars.len() - 1]);
            let rate = record_rate(&mut tape, h, loc, raw)?;
            rate_var = Some(rate);
        }
    }
    let rate = rate_var.unwrap();
    let dist = record_focal(&mut tape, h, grid, cfg.alpha, cfg.gamma)?;
    let occupied = grid.len() as f64;
    let r = tape.value(rate).item() / occupied;
    let d = tape.value(dist).item();
    let weighted_d = tape.scale(dist, cfg.lambda);
    let bpov = tape.scale(rate, 1.0 / occupied);
    let loss = tape.add(weighted_d, bpov)?;
    let g = tape.backward(loss)?;
    let grads = vars
        .iter()
        .map(|&v| {
            g.get(v)
                .map_or_else(|| vec![0.0; tape.value(v).numel()], <[f64]>::to_vec)
        })
        .collect();
    Ok(SampleResult { d, r, grads })
}

/// Batch loss and the gradient of its `l` with respect to every tensor of
/// [`ModelParams::tensors`]. Quantization noise depends only on
/// `(cfg.seed, step, sample index)`.
pub fn loss_and_gradients(
    batch: &[VoxelGrid],
    params: &ModelParams,
    cfg: &TrainConfig,
    step: u64,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(CodecError::Argument("empty batch".into()));
    }
    if let Some(g) = batch.iter().find(|g| g.resolution() != cfg.resolution) {
        return Err(CodecError::Shape(format!(
            "grid of resolution {} in a batch configured for {}",
            g.resolution(),
            cfg.resolution
        )));
    }
    let mut grads: Vec<Vec<f64>> = params
        .tensors()
        .iter()
        .map(|t| vec![0.0; t.numel()])
        .collect();
    let (mut d, mut r) = (0.0, 0.0);
    let scale = 1.0 / batch.len() as f64;
    let width = rayon::current_num_threads().max(1);
    // Samples run in parallel, results are reduced in batch order.
    for (c, chunk) in batch.chunks(width).enumerate() {
        let results: Vec<Result<SampleResult>> = chunk
            .par_iter()
            .enumerate()
            .map(|(j, grid)| sample(grid, params, cfg, noise_seed(cfg.seed, step, c * width + j)))
            .collect();
        for res in results {
            let res = res?;
            d += res.d * scale;
            r += res.r * scale;
            for (acc, g) in grads.iter_mut().zip(&res.grads) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b * scale);
            }
        }
    }
    let tensors = params
        .tensors()
        .iter()
        .zip(grads)
        .map(|(t, g)| Tensor::new(t.shape(), g))
        .collect::<std::result::Result<_, _>>()?;
    let l = cfg.lambda * d + r;
    Ok((LossBreakdown { d, r, l }, tensors))
}

/// One optimizer step on `batch`. The step counter of `opt` selects the
/// quantization noise, so a run is reproducible from its seed. Parameters
/// are rounded to single precision after the update.
pub fn train_step(
    batch: &[VoxelGrid],
    params: &mut ModelParams,
    cfg: &TrainConfig,
    opt: &mut AdamState,
) -> Result<LossBreakdown> {
    let (loss, grads) = loss_and_gradients(batch, params, cfg, opt.t)?;
    let mut tensors = params.tensors_mut();
    for (t, g) in tensors.iter_mut().zip(grads) {
        t.grad = Some(g.into_data());
    }
    adam_step(&mut tensors, opt)?;
    params.snap_to_f32();
    Ok(loss)
}
