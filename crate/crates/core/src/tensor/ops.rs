use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Result, Tensor, TensorError};

/// Elementwise maps used by the codec.
///
/// `Round` rounds half to even and has zero gradient; `AddNoise` adds
/// i.i.d. `Uniform[lo, hi)` noise drawn from a ChaCha8 stream and passes
/// gradients through unchanged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Relu,
    AddNoise { lo: f64, hi: f64, seed: u64 },
    Round,
    Clamp { lo: f64, hi: f64 },
}

pub fn elementwise(input: &Tensor, kind: Elementwise) -> Result<Tensor> {
    let x = input.data();
    let data: Vec<f64> = match kind {
        Elementwise::Relu => x.iter().map(|v| v.max(0.0)).collect(),
        Elementwise::Round => x.iter().map(|v| v.round_ties_even()).collect(),
        Elementwise::Clamp { lo, hi } => {
            check_range(lo, hi)?;
            x.iter().map(|v| v.clamp(lo, hi)).collect()
        }
        Elementwise::AddNoise { lo, hi, seed } => {
            check_range(lo, hi)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            x.iter()
                .map(|v| v + lo + (hi - lo) * rng.gen::<f64>())
                .collect()
        }
    };
    Tensor::new(input.shape(), data)
}

fn check_range(lo: f64, hi: f64) -> Result<()> {
    if lo.is_nan() || hi.is_nan() || lo > hi {
        return Err(TensorError::Argument(format!("empty range [{lo}, {hi}]")));
    }
    Ok(())
}
