//! Learned convolutional geometry codec.
//!
//! A voxel grid `x` goes through a three-layer strided analysis transform to
//! a latent `y`, which is quantized and coded losslessly. The decoder runs a
//! mirrored synthesis transform that predicts per-voxel occupancy scores and
//! thresholds them. Training minimizes `lambda * D + R`, where `D` is an
//! alpha-balanced focal loss over every voxel of the grid and `R` is the
//! rate of the quantized latent, in bits per occupied input voxel, under a
//! learned per-channel Laplacian model.

mod bitstream;
mod checkpoint;
mod entropy;
mod focal;
mod model;
mod train;

pub use bitstream::{decode, decode_latents, encode, CompressedBitstream, FORMAT_VERSION};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState};
pub use entropy::{laplace_bits, rate_bits, EntropyModel, MIN_PROBABILITY};
pub use focal::{focal_loss, FOCAL_EPS};
pub use model::{
    latent_shape, layer_specs, reconstruction_shape, LayerSpec, ModelId, ModelParams, OUTPUT_BIAS,
    OUTPUT_WEIGHT_SCALE,
};
pub use train::{
    analysis, loss_and_gradients, quantize, synthesis, train_step, LossBreakdown, QuantMode,
    TrainConfig,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("model mismatch: stream was made by {expected}, parameters are {found}")]
    ModelMismatch { expected: ModelId, found: ModelId },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, CodecError>;
