//! Stream layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4  | magic `PCGC` |
//! | 1  | version (1) |
//! | 16 | model id |
//! | 2  | grid resolution `r` |
//! | 8  | latent shape `C, D, H, W`, one u16 each |
//! | 4  | occupied voxels of the input grid |
//! | 4  | payload length |
//! | .. | payload |
//!
//! The payload is raw DEFLATE (RFC 1951) over the quantized latent in
//! row-major order, each value a zig-zag LEB128 varint.

use miniz_oxide::deflate::compress_to_vec;
use miniz_oxide::inflate::decompress_to_vec_with_limit;

use super::train::{analysis, quantize, synthesis, QuantMode};
use super::{CodecError, ModelId, ModelParams, Result};
use crate::geometry::VoxelGrid;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PCGC";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 16 + 2 + 8 + 4 + 4;
const DEFLATE_LEVEL: u8 = 9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedBitstream {
    pub model_id: ModelId,
    pub resolution: u16,
    pub latent_shape: [u16; 4],
    pub occupied: u32,
    pub payload: Vec<u8>,
}

impl CompressedBitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&self.model_id.0);
        out.extend_from_slice(&self.resolution.to_le_bytes());
        for d in self.latent_shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.occupied.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 || &bytes[..4] != MAGIC {
            return Err(CodecError::Format("not a PCGC stream".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(CodecError::Format(format!(
                "unsupported stream version {}",
                bytes[4]
            )));
        }
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Corrupt(format!(
                "stream of {} bytes is shorter than its header",
                bytes.len()
            )));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let payload_len = u32_at(HEADER_LEN - 4) as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != payload_len {
            return Err(CodecError::Corrupt(format!(
                "header declares {payload_len} payload bytes, stream carries {}",
                payload.len()
            )));
        }
        Ok(Self {
            model_id: ModelId(bytes[5..21].try_into().unwrap()),
            resolution: u16_at(21),
            latent_shape: [u16_at(23), u16_at(25), u16_at(27), u16_at(29)],
            occupied: u32_at(31),
            payload: payload.to_vec(),
        })
    }

    /// Serialized size in bytes, header included.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    /// Bits per occupied input voxel of the whole stream.
    pub fn bpov(&self) -> f64 {
        8.0 * self.byte_len() as f64 / self.occupied as f64
    }
}

fn put_varint(out: &mut Vec<u8>, v: i64) {
    let mut z = ((v << 1) ^ (v >> 63)) as u64;
    while z >= 0x80 {
        out.push((z as u8) | 0x80);
        z >>= 7;
    }
    out.push(z as u8);
}

fn get_varint(bytes: &[u8], pos: &mut usize) -> Option<i64> {
    let mut z = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *bytes.get(*pos)?;
        *pos += 1;
        z |= u64::from(b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return Some((z >> 1) as i64 ^ -((z & 1) as i64));
        }
    }
    None
}

/// Compresses `grid` with the analysis transform of `params`.
pub fn encode(grid: &VoxelGrid, params: &ModelParams) -> Result<CompressedBitstream> {
    let r = grid.resolution();
    if r > u16::MAX as usize {
        return Err(CodecError::Argument(format!(
            "resolution {r} exceeds 65535"
        )));
    }
    if grid.is_empty() {
        return Err(CodecError::Argument("cannot encode an empty grid".into()));
    }
    let y = quantize(&analysis(&grid.to_tensor(), params)?, QuantMode::Eval);
    let mut raw = Vec::with_capacity(y.numel());
    for &v in y.data() {
        if !(v.abs() < (1u64 << 53) as f64) {
            return Err(CodecError::Argument(format!(
                "latent value {v} cannot be coded"
            )));
        }
        put_varint(&mut raw, v as i64);
    }
    let shape = y.shape();
    Ok(CompressedBitstream {
        model_id: params.model_id(),
        resolution: r as u16,
        latent_shape: std::array::from_fn(|i| shape[i] as u16),
        occupied: u32::try_from(grid.len())
            .map_err(|_| CodecError::Argument("too many occupied voxels".into()))?,
        payload: compress_to_vec(&raw, DEFLATE_LEVEL),
    })
}

/// The quantized latent carried by `bs`, shaped `[C, D, H, W]`.
pub fn decode_latents(bs: &CompressedBitstream) -> Result<Tensor> {
    let shape = bs.latent_shape.map(usize::from);
    let count: usize = shape.iter().product();
    if count == 0 {
        return Err(CodecError::Corrupt(format!("empty latent shape {shape:?}")));
    }
    // A varint of a 53-bit value takes at most 8 bytes.
    let raw = decompress_to_vec_with_limit(&bs.payload, count * 8)
        .map_err(|e| CodecError::Corrupt(format!("payload does not inflate: {e:?}")))?;
    let mut values = Vec::with_capacity(count);
    let mut pos = 0;
    while pos < raw.len() {
        let v = get_varint(&raw, &mut pos)
            .ok_or_else(|| CodecError::Corrupt("truncated varint in payload".into()))?;
        values.push(v as f64);
    }
    if values.len() != count {
        return Err(CodecError::Corrupt(format!(
            "payload holds {} values, latent shape {shape:?} needs {count}",
            values.len()
        )));
    }
    Ok(Tensor::new(&shape, values)?)
}

/// Reconstructs a grid: scores are clamped to `[0, 1]` and cells at or
/// above `threshold` become occupied.
pub fn decode(bs: &CompressedBitstream, params: &ModelParams, threshold: f64) -> Result<VoxelGrid> {
    let id = params.model_id();
    if bs.model_id != id {
        return Err(CodecError::ModelMismatch {
            expected: bs.model_id,
            found: id,
        });
    }
    let y = decode_latents(bs)?;
    let scores = synthesis(&y, params)?;
    let r = bs.resolution as usize;
    if scores.shape() != [1, r, r, r] {
        return Err(CodecError::Corrupt(format!(
            "latent decodes to {:?}, header says resolution {r}",
            scores.shape()
        )));
    }
    let clamped: Vec<f64> = scores.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(VoxelGrid::from_dense(r, &clamped, threshold)?)
}
