//! Factorized Laplacian rate model.
//!
//! Each latent channel `c` has a location `mu_c` and a scale
//! `s_c = softplus(raw_c)`. An integer `v` costs `-log2 p` bits with
//! `p = F(v + 1/2) - F(v - 1/2)` and `F` the Laplacian CDF. Training feeds
//! noisy, non-integer values through the same formula.

use super::{CodecError, ModelParams, Result};
use crate::tensor::{Backward, Tape, Tensor, Var};

/// Floor applied to bin probabilities before taking the logarithm, so a
/// single symbol never costs more than 50 bits.
pub const MIN_PROBABILITY: f64 = 1.0 / (1u64 << 50) as f64;

/// Lower bound on the Laplacian scale.
const MIN_SCALE: f64 = 1e-6;

/// Per-channel entropy parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyModel {
    pub loc: Tensor,
    /// Unconstrained parameter; the scale is `softplus(raw_scale)`.
    pub raw_scale: Tensor,
}

impl EntropyModel {
    /// Zero location and unit scale on every channel.
    pub fn new(channels: usize) -> Self {
        let unit = 1f64.exp_m1().ln();
        Self {
            loc: Tensor::zeros(&[channels]),
            raw_scale: Tensor::full(&[channels], unit),
        }
    }

    pub fn channels(&self) -> usize {
        self.loc.numel()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.raw_scale
            .data()
            .iter()
            .map(|&r| scale_of(r).0)
            .collect()
    }
}

/// `(scale, d scale / d raw)`.
fn scale_of(raw: f64) -> (f64, f64) {
    let softplus = raw.max(0.0) + (-raw.abs()).exp().ln_1p();
    if softplus < MIN_SCALE {
        (MIN_SCALE, 0.0)
    } else {
        (softplus, 1.0 / (1.0 + (-raw).exp()))
    }
}

/// Bits for value `v` and derivatives with respect to `v` and `s`.
fn bin_bits(v: f64, mu: f64, s: f64) -> (f64, f64, f64) {
    let a = (v + 0.5 - mu) / s;
    let b = (v - 0.5 - mu) / s;
    let p = if b >= 0.0 {
        0.5 * (-b).exp() * -(b - a).exp_m1()
    } else if a <= 0.0 {
        0.5 * a.exp() * -(b - a).exp_m1()
    } else {
        1.0 - 0.5 * (-a).exp() - 0.5 * b.exp()
    };
    if !(p > MIN_PROBABILITY) {
        return (-MIN_PROBABILITY.log2(), 0.0, 0.0);
    }
    let fa = 0.5 * (-a.abs()).exp();
    let fb = 0.5 * (-b.abs()).exp();
    let dp_dv = (fa - fb) / s;
    let dp_ds = (b * fb - a * fa) / s;
    let k = -1.0 / (p * std::f64::consts::LN_2);
    (-p.log2(), k * dp_dv, k * dp_ds)
}

/// Bits for value `v` under a Laplacian with location `mu` and scale `s`.
pub fn laplace_bits(v: f64, mu: f64, s: f64) -> f64 {
    bin_bits(v, mu, s).0
}

fn check_latent(y: &Tensor, channels: usize) -> Result<usize> {
    match y.shape() {
        [c, rest @ ..] if *c == channels && rest.len() == 3 => Ok(y.numel() / c),
        s => Err(CodecError::Shape(format!(
            "latent of shape {s:?} does not match {channels} entropy channels"
        ))),
    }
}

/// Total bits of a `[C, D, H, W]` latent under the model in `params`.
pub fn rate_bits(y_hat: &Tensor, params: &ModelParams) -> Result<f64> {
    total_bits(y_hat, &params.entropy)
}

fn total_bits(y: &Tensor, em: &EntropyModel) -> Result<f64> {
    let per = check_latent(y, em.channels())?;
    let scales = em.scales();
    let mut total = 0.0;
    for (c, chunk) in y.data().chunks(per).enumerate() {
        let mu = em.loc.data()[c];
        total += chunk
            .iter()
            .map(|&v| laplace_bits(v, mu, scales[c]))
            .sum::<f64>();
    }
    Ok(total)
}

struct RateOp;

impl Backward for RateOp {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        let (y, loc, raw) = (inputs[0], inputs[1], inputs[2]);
        let g = grad[0];
        let per = y.numel() / loc.numel();
        let mut gy = vec![0.0; y.numel()];
        let mut gloc = vec![0.0; loc.numel()];
        let mut graw = vec![0.0; raw.numel()];
        for c in 0..loc.numel() {
            let mu = loc.data()[c];
            let (s, ds) = scale_of(raw.data()[c]);
            let (mut sum_v, mut sum_s) = (0.0, 0.0);
            for i in c * per..(c + 1) * per {
                let (_, dv, dsc) = bin_bits(y.data()[i], mu, s);
                gy[i] = g * dv;
                sum_v += dv;
                sum_s += dsc;
            }
            gloc[c] = -g * sum_v;
            graw[c] = g * sum_s * ds;
        }
        vec![
            needs[0].then_some(gy),
            needs[1].then_some(gloc),
            needs[2].then_some(graw),
        ]
    }
}

/// Records the total bits of `y_hat` on the tape, differentiable in the
/// latent, the locations and the raw scales.
pub(crate) fn record_rate(tape: &mut Tape, y_hat: Var, loc: Var, raw: Var) -> Result<Var> {
    let em = EntropyModel {
        loc: tape.value(loc).clone(),
        raw_scale: tape.value(raw).clone(),
    };
    let total = total_bits(tape.value(y_hat), &em)?;
    Ok(tape.custom(&[y_hat, loc, raw], Tensor::scalar(total), Box::new(RateOp)))
}
