//! Sparse voxel grid files, all integers little-endian:
//!
//! ```text
//! "PCGV" | version u8 = 1 | r u16 | count u32 | count * (x u16, y u16, z u16)
//! ```
//!
//! Coordinates are written in lexicographic order.

use std::fs;
use std::path::Path;

use pcgc::geometry::VoxelGrid;

use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"PCGV";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 2 + 4;

pub fn to_bytes(grid: &VoxelGrid) -> Result<Vec<u8>> {
    let r = u16::try_from(grid.resolution())
        .map_err(|_| CliError::Usage(format!("resolution {} exceeds 65535", grid.resolution())))?;
    let count = u32::try_from(grid.len()).map_err(|_| CliError::Data("too many voxels".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 6 * grid.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&r.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for c in grid.occupied() {
        for v in c {
            out.extend_from_slice(&(*v as u16).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<VoxelGrid> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(CliError::Corrupt("not a PCGV voxel file".into()));
    }
    if bytes[4] != VERSION {
        return Err(CliError::Corrupt(format!(
            "unsupported voxel file version {}",
            bytes[4]
        )));
    }
    let r = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
    let count = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 6 * count {
        return Err(CliError::Corrupt(format!(
            "{count} voxels need {} bytes, file has {}",
            6 * count,
            body.len()
        )));
    }
    let cells = body
        .chunks_exact(6)
        .map(|c| std::array::from_fn(|k| u32::from(u16::from_le_bytes([c[2 * k], c[2 * k + 1]]))))
        .collect();
    VoxelGrid::new(r, cells).map_err(|e| CliError::Corrupt(e.to_string()))
}

pub fn save(grid: &VoxelGrid, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(grid)?).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<VoxelGrid> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    from_bytes(&bytes).map_err(|e| e.at(path))
}
