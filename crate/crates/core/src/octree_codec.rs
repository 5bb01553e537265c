//! Depth-limited octree coder used as the anchor codec.
//!
//! Stream layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `PCGO` |
//! | 1 | version (1) |
//! | 2 | grid resolution `r` |
//! | 1 | depth |
//! | 4 | payload length |
//! | .. | payload |
//!
//! The payload is raw DEFLATE over one occupancy byte per internal node,
//! breadth first. Child `(xh, yh, zh)` of a node, each half 0 or 1, has
//! index `4 * xh + 2 * yh + zh` and sets bit `0x80 >> index`.

use miniz_oxide::deflate::compress_to_vec;
use miniz_oxide::inflate::decompress_to_vec_with_limit;

use crate::geometry::{PointCloud, VoxelGrid};

const MAGIC: &[u8; 4] = b"PCGO";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 2 + 1 + 4;
const DEFLATE_LEVEL: u8 = 9;

#[derive(Debug, thiserror::Error)]
pub enum OctreeError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unsupported format: {0}")]
    Format(String),
    #[error("corrupt stream: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, OctreeError>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OctreeStream {
    pub resolution: u16,
    pub depth: u8,
    pub payload: Vec<u8>,
}

impl OctreeStream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&self.resolution.to_le_bytes());
        out.push(self.depth);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 || &bytes[..4] != MAGIC {
            return Err(OctreeError::Format("not a PCGO stream".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(OctreeError::Format(format!(
                "unsupported stream version {}",
                bytes[4]
            )));
        }
        if bytes.len() < HEADER_LEN {
            return Err(OctreeError::Corrupt(format!(
                "stream of {} bytes is shorter than its header",
                bytes.len()
            )));
        }
        let payload_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != payload_len {
            return Err(OctreeError::Corrupt(format!(
                "header declares {payload_len} payload bytes, stream carries {}",
                payload.len()
            )));
        }
        Ok(Self {
            resolution: u16::from_le_bytes([bytes[5], bytes[6]]),
            depth: bytes[7],
            payload: payload.to_vec(),
        })
    }

    /// Serialized size in bytes, header included.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

/// `log2 r`, or an error when `r` is not a power of two in `[2, 32768]`.
fn levels(r: usize) -> Result<u32> {
    if !r.is_power_of_two() || !(2..=1 << 15).contains(&r) {
        return Err(OctreeError::Argument(format!(
            "resolution {r} is not a power of two in [2, 32768]"
        )));
    }
    Ok(r.trailing_zeros())
}

fn check_depth(depth: usize, levels: u32) -> Result<()> {
    if depth == 0 || depth > levels as usize {
        return Err(OctreeError::Argument(format!(
            "depth {depth} outside [1, {levels}]"
        )));
    }
    Ok(())
}

/// Interleaves the coordinate bits, x highest within each triple, so that
/// sorted codes list the nodes of every level in breadth-first order.
fn morton(c: [u32; 3], levels: u32) -> u64 {
    let mut code = 0u64;
    for b in (0..levels).rev() {
        for v in c {
            code = code << 1 | u64::from(v >> b & 1);
        }
    }
    code
}

/// The occupancy bytes before DEFLATE.
pub fn occupancy_bytes(grid: &VoxelGrid, depth: usize) -> Result<Vec<u8>> {
    let levels = levels(grid.resolution())?;
    check_depth(depth, levels)?;
    if grid.is_empty() {
        return Err(OctreeError::Argument("cannot encode an empty grid".into()));
    }
    let mut codes: Vec<u64> = grid.occupied().iter().map(|&c| morton(c, levels)).collect();
    codes.sort_unstable();
    let mut out = Vec::new();
    for level in 0..depth as u32 {
        let node_shift = 3 * (levels - level);
        let child_shift = node_shift - 3;
        let mut i = 0;
        while i < codes.len() {
            let node = codes[i] >> node_shift;
            let mut byte = 0u8;
            while i < codes.len() && codes[i] >> node_shift == node {
                byte |= 0x80 >> (codes[i] >> child_shift & 7);
                i += 1;
            }
            out.push(byte);
        }
    }
    Ok(out)
}

/// Encodes the occupancy of `grid` down to `depth` levels.
pub fn octree_encode(grid: &VoxelGrid, depth: usize) -> Result<OctreeStream> {
    let bytes = occupancy_bytes(grid, depth)?;
    Ok(OctreeStream {
        resolution: grid.resolution() as u16,
        depth: depth as u8,
        payload: compress_to_vec(&bytes, DEFLATE_LEVEL),
    })
}

/// Leaf cells at the stream's depth, one point per cell at the floored
/// cell center, sorted lexicographically.
pub fn octree_decode(stream: &OctreeStream) -> Result<PointCloud> {
    let r = stream.resolution as usize;
    let levels = levels(r)?;
    let depth = stream.depth as usize;
    check_depth(depth, levels)?;
    // A tree of this depth has at most this many internal nodes.
    let limit = (0..depth as u32).map(|l| 1usize << (3 * l)).sum::<usize>();
    let bytes = decompress_to_vec_with_limit(&stream.payload, limit)
        .map_err(|e| OctreeError::Corrupt(format!("payload does not inflate: {e:?}")))?;
    let mut nodes = vec![[0u32; 3]];
    let mut pos = 0;
    for _ in 0..depth {
        let mut next = Vec::with_capacity(nodes.len() * 8);
        for node in &nodes {
            let byte = *bytes.get(pos).ok_or_else(|| {
                OctreeError::Corrupt(format!("payload ends after {pos} occupancy bytes"))
            })?;
            if byte == 0 {
                return Err(OctreeError::Corrupt(format!(
                    "occupancy byte {pos} marks an empty node"
                )));
            }
            pos += 1;
            for idx in 0..8 {
                if byte & (0x80 >> idx) != 0 {
                    next.push([
                        node[0] << 1 | idx >> 2,
                        node[1] << 1 | idx >> 1 & 1,
                        node[2] << 1 | idx & 1,
                    ]);
                }
            }
        }
        nodes = next;
    }
    if pos != bytes.len() {
        return Err(OctreeError::Corrupt(format!(
            "{} occupancy bytes left after the last level",
            bytes.len() - pos
        )));
    }
    let size = (r >> depth) as u32;
    let mut cells: Vec<[u32; 3]> = nodes
        .into_iter()
        .map(|c| c.map(|v| v * size + (size - 1) / 2))
        .collect();
    cells.sort_unstable();
    Ok(
        PointCloud::new(cells.into_iter().map(|c| c.map(f64::from)).collect())
            .expect("integer coordinates are finite"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::devoxelize;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    /// Recursive depth-first reference that collects the bytes per level.
    fn reference_bytes(grid: &VoxelGrid, depth: usize) -> Vec<u8> {
        fn visit(
            grid: &VoxelGrid,
            lo: [u32; 3],
            size: u32,
            level: usize,
            depth: usize,
            out: &mut [Vec<u8>],
        ) {
            if level == depth {
                return;
            }
            let half = size / 2;
            let mut byte = 0u8;
            let mut children = Vec::new();
            for idx in 0..8u32 {
                let clo = [
                    lo[0] + (idx >> 2) * half,
                    lo[1] + (idx >> 1 & 1) * half,
                    lo[2] + (idx & 1) * half,
                ];
                let hit = grid
                    .occupied()
                    .iter()
                    .any(|c| (0..3).all(|k| c[k] >= clo[k] && c[k] < clo[k] + half));
                if hit {
                    byte |= 0x80 >> idx;
                    children.push(clo);
                }
            }
            out[level].push(byte);
            for c in children {
                visit(grid, c, half, level + 1, depth, out);
            }
        }
        let mut per_level = vec![Vec::new(); depth];
        visit(
            grid,
            [0; 3],
            grid.resolution() as u32,
            0,
            depth,
            &mut per_level,
        );
        per_level.concat()
    }

    #[test]
    fn full_two_cube_is_one_byte() {
        let cells = (0..8).map(|i| [i >> 2, i >> 1 & 1, i & 1]).collect();
        let g = VoxelGrid::new(2, cells).unwrap();
        assert_eq!(occupancy_bytes(&g, 1).unwrap(), vec![0xff]);
    }

    #[test]
    fn origin_voxel_trace() {
        let g = VoxelGrid::new(8, vec![[0, 0, 0]]).unwrap();
        assert_eq!(occupancy_bytes(&g, 3).unwrap(), vec![0x80, 0x80, 0x80]);
        let g = VoxelGrid::new(8, vec![[7, 0, 0]]).unwrap();
        assert_eq!(occupancy_bytes(&g, 3).unwrap(), vec![0x08, 0x08, 0x08]);
        let g = VoxelGrid::new(8, vec![[0, 0, 7]]).unwrap();
        assert_eq!(occupancy_bytes(&g, 3).unwrap(), vec![0x40, 0x40, 0x40]);
    }

    #[test]
    fn bad_arguments_rejected() {
        let g = VoxelGrid::new(12, vec![[0, 0, 0]]).unwrap();
        assert!(matches!(
            octree_encode(&g, 1),
            Err(OctreeError::Argument(_))
        ));
        let g = VoxelGrid::new(16, vec![[0, 0, 0]]).unwrap();
        assert!(matches!(
            octree_encode(&g, 0),
            Err(OctreeError::Argument(_))
        ));
        assert!(matches!(
            octree_encode(&g, 5),
            Err(OctreeError::Argument(_))
        ));
        let empty = VoxelGrid::empty(16).unwrap();
        assert!(matches!(
            octree_encode(&empty, 4),
            Err(OctreeError::Argument(_))
        ));
    }

    #[test]
    fn coarse_depth_decodes_to_octant_centers() {
        let g = VoxelGrid::new(8, vec![[0, 0, 0], [1, 2, 3], [5, 6, 7]]).unwrap();
        let pc = octree_decode(&octree_encode(&g, 1).unwrap()).unwrap();
        assert_eq!(pc.points(), &[[1.0, 1.0, 1.0], [5.0, 5.0, 5.0]]);
    }

    #[test]
    fn stream_header_round_trip() {
        let g = VoxelGrid::new(16, vec![[3, 9, 12]]).unwrap();
        let s = octree_encode(&g, 4).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..8], &[b'P', b'C', b'G', b'O', 1, 16, 0, 4]);
        assert_eq!(bytes.len(), s.byte_len());
        assert_eq!(OctreeStream::from_bytes(&bytes).unwrap(), s);
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            OctreeStream::from_bytes(&bad),
            Err(OctreeError::Format(_))
        ));
        assert!(matches!(
            OctreeStream::from_bytes(&bytes[..bytes.len() - 1]),
            Err(OctreeError::Corrupt(_))
        ));
    }

    #[test]
    fn short_or_long_payloads_are_corruption() {
        let g = VoxelGrid::new(8, vec![[0, 0, 0], [7, 7, 7]]).unwrap();
        let raw = occupancy_bytes(&g, 3).unwrap();
        let with = |bytes: &[u8]| OctreeStream {
            resolution: 8,
            depth: 3,
            payload: compress_to_vec(bytes, 6),
        };
        assert!(octree_decode(&with(&raw)).is_ok());
        assert!(matches!(
            octree_decode(&with(&raw[..raw.len() - 1])),
            Err(OctreeError::Corrupt(_))
        ));
        let mut long = raw.clone();
        long.push(0x80);
        assert!(matches!(
            octree_decode(&with(&long)),
            Err(OctreeError::Corrupt(_))
        ));
        let mut zero = raw.clone();
        zero[1] = 0;
        assert!(matches!(
            octree_decode(&with(&zero)),
            Err(OctreeError::Corrupt(_))
        ));
    }

    fn grid_strategy() -> impl Strategy<Value = VoxelGrid> {
        (1u32..7).prop_flat_map(|l| {
            let r = 1u32 << l;
            prop::collection::vec(prop::array::uniform3(0..r), 1..120)
                .prop_map(move |c| VoxelGrid::new(r as usize, c).unwrap())
        })
    }

    proptest! {
        #[test]
        fn matches_recursive_reference(g in grid_strategy(), d in 1usize..7) {
            let depth = d.min(g.resolution().trailing_zeros() as usize);
            prop_assert_eq!(occupancy_bytes(&g, depth).unwrap(), reference_bytes(&g, depth));
        }

        #[test]
        fn lossless_at_full_depth(g in grid_strategy()) {
            let full = g.resolution().trailing_zeros() as usize;
            let pc = octree_decode(&octree_encode(&g, full).unwrap()).unwrap();
            prop_assert_eq!(pc, devoxelize(&g));
        }

        #[test]
        fn coarser_depths_cover_and_shrink(g in grid_strategy()) {
            let full = g.resolution().trailing_zeros() as usize;
            let mut last = usize::MAX;
            for depth in (1..=full).rev() {
                let pc = octree_decode(&octree_encode(&g, depth).unwrap()).unwrap();
                prop_assert!(pc.len() <= last);
                last = pc.len();
                // Every voxel's leaf cell decodes to its floored center.
                let size = (g.resolution() >> depth) as u32;
                let centers: BTreeSet<[u32; 3]> = g
                    .occupied()
                    .iter()
                    .map(|c| c.map(|v| v / size * size + (size - 1) / 2))
                    .collect();
                let decoded: BTreeSet<[u32; 3]> =
                    pc.points().iter().map(|p| p.map(|v| v as u32)).collect();
                prop_assert_eq!(decoded, centers);
            }
        }
    }
}
