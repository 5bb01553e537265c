//! Checkpoint layout, all integers little-endian:
//!
//! ```text
//! "PCGM" | version u8 = 1 | N u32
//! 6 layer records: out u32 | in u32 | kernel u8 | stride u8 | bias u8 | relu u8 | transpose u8
//! tensor count u32, then per tensor: length u32 | f32 values
//! model id (16 bytes)
//! training-state flag u8; when 1:
//!   resolution u32 | Adam step u64 | lr, beta1, beta2, eps as f64
//!   first moments, then second moments, as f64 in tensor order
//! ```

use std::fs;
use std::path::Path;

use super::model::spec_bytes;
use super::{layer_specs, CodecError, ModelId, ModelParams, Result};
use crate::tensor::{AdamState, Tensor};

const MAGIC: &[u8; 4] = b"PCGM";
const VERSION: u8 = 1;

/// Optimizer progress saved alongside the parameters so training can
/// resume exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub resolution: usize,
    pub adam: AdamState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub state: Option<TrainState>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(p.n() as u32).to_le_bytes());
        for spec in layer_specs(p.n()) {
            out.extend_from_slice(&spec_bytes(&spec));
        }
        let tensors = p.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in &tensors {
            out.extend_from_slice(&(t.numel() as u32).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&p.model_id().0);
        match &self.state {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&(s.resolution as u32).to_le_bytes());
                out.extend_from_slice(&s.adam.t.to_le_bytes());
                for v in [s.adam.lr, s.adam.beta1, s.adam.beta2, s.adam.eps] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for t in s.adam.m.iter().chain(&s.adam.v) {
                    for v in t.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CodecError::Format("not a PCGM checkpoint".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(CodecError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let n = r.u32()? as usize;
        if n == 0 {
            return Err(CodecError::Corrupt(
                "checkpoint declares zero feature maps".into(),
            ));
        }
        for (i, spec) in layer_specs(n).iter().enumerate() {
            if r.take(13)? != spec_bytes(spec) {
                return Err(CodecError::Corrupt(format!(
                    "layer {i} record does not match the architecture"
                )));
            }
        }
        let template = ModelParams::zeros(n)?;
        let shapes: Vec<Vec<usize>> = template
            .tensors()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        let count = r.u32()? as usize;
        if count != shapes.len() {
            return Err(CodecError::Corrupt(format!(
                "checkpoint holds {count} tensors, expected {}",
                shapes.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for shape in &shapes {
            let len = r.u32()? as usize;
            let numel: usize = shape.iter().product();
            if len != numel {
                return Err(CodecError::Corrupt(format!(
                    "tensor of {len} values, expected {numel}"
                )));
            }
            let data = r
                .take(4 * len)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        let params = ModelParams::from_tensors(n, tensors)?;
        let stored = ModelId(r.take(16)?.try_into().unwrap());
        if stored != params.model_id() {
            return Err(CodecError::Corrupt(format!(
                "stored model id {stored} does not match contents {}",
                params.model_id()
            )));
        }
        let state = match r.u8()? {
            0 => None,
            1 => {
                let resolution = r.u32()? as usize;
                let t = r.u64()?;
                let [lr, beta1, beta2, eps] = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
                let mut moments = Vec::with_capacity(2 * shapes.len());
                for shape in shapes.iter().chain(&shapes) {
                    let numel: usize = shape.iter().product();
                    let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                    moments.push(Tensor::new(shape, data)?);
                }
                let v = moments.split_off(shapes.len());
                Some(TrainState {
                    resolution,
                    adam: AdamState {
                        m: moments,
                        v,
                        t,
                        lr,
                        beta1,
                        beta2,
                        eps,
                    },
                })
            }
            f => return Err(CodecError::Corrupt(format!("bad training-state flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(CodecError::Corrupt(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { params, state })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| CodecError::Corrupt("checkpoint is truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|source| CodecError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a checkpoint; with `expected_n` set, a model of another width is a
/// shape error.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_n: Option<usize>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CodecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    if let Some(n) = expected_n {
        if ckpt.params.n() != n {
            return Err(CodecError::Shape(format!(
                "checkpoint has {} feature maps, expected {n}",
                ckpt.params.n()
            )));
        }
    }
    Ok(ckpt)
}
