use super::{GeometryError, PointCloud, Result};
use crate::tensor::Tensor;

/// Set of occupied cells of an `r x r x r` lattice.
///
/// Coordinates are kept sorted lexicographically by `(x, y, z)` with no
/// duplicates, which is also the row-major order of the dense layout
/// `(x * r + y) * r + z`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelGrid {
    resolution: usize,
    occupied: Vec<[u32; 3]>,
}

impl VoxelGrid {
    pub fn new(resolution: usize, mut occupied: Vec<[u32; 3]>) -> Result<Self> {
        if resolution == 0 || resolution > u32::MAX as usize {
            return Err(GeometryError::Argument(format!(
                "resolution {resolution} out of range"
            )));
        }
        if let Some(c) = occupied
            .iter()
            .find(|c| c.iter().any(|&v| v as usize >= resolution))
        {
            return Err(GeometryError::Argument(format!(
                "voxel {c:?} outside a grid of resolution {resolution}"
            )));
        }
        occupied.sort_unstable();
        occupied.dedup();
        Ok(Self {
            resolution,
            occupied,
        })
    }

    pub fn empty(resolution: usize) -> Result<Self> {
        Self::new(resolution, Vec::new())
    }

    /// Cells whose dense value is at least `threshold`. `values` is laid out
    /// as `(x * r + y) * r + z`.
    pub fn from_dense(resolution: usize, values: &[f64], threshold: f64) -> Result<Self> {
        if values.len() != resolution.pow(3) {
            return Err(GeometryError::Argument(format!(
                "{} dense values for resolution {resolution}",
                values.len()
            )));
        }
        let r = resolution;
        let occupied = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= threshold)
            .map(|(i, _)| [(i / (r * r)) as u32, (i / r % r) as u32, (i % r) as u32])
            .collect();
        Ok(Self {
            resolution,
            occupied,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn occupied(&self) -> &[[u32; 3]] {
        &self.occupied
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn contains(&self, c: [u32; 3]) -> bool {
        self.occupied.binary_search(&c).is_ok()
    }

    pub fn dense_index(&self, c: [u32; 3]) -> usize {
        let r = self.resolution;
        (c[0] as usize * r + c[1] as usize) * r + c[2] as usize
    }

    /// Binary occupancy as a `[1, r, r, r]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let r = self.resolution;
        let mut t = Tensor::zeros(&[1, r, r, r]);
        for &c in &self.occupied {
            let i = self.dense_index(c);
            t.data_mut()[i] = 1.0;
        }
        t
    }
}

/// Maps the cloud's bounding box into `[0, r-1]^3`.
///
/// The largest extent spans `r - 1` cells, the other axes keep the aspect
/// ratio and are centered to the nearest whole cell (the spare cell, if
/// any, goes on the high side). Coordinates round to nearest, ties to even.
pub fn voxelize(pc: &PointCloud, r: usize) -> Result<VoxelGrid> {
    if r < 2 {
        return Err(GeometryError::Argument(format!(
            "resolution must be >= 2, got {r}"
        )));
    }
    let Some(first) = pc.points().first() else {
        return Err(GeometryError::Argument(
            "cannot voxelize an empty cloud".into(),
        ));
    };
    let (mut lo, mut hi) = (*first, *first);
    for p in pc.points() {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span = (r - 1) as f64;
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let scale = if extent > 0.0 { span / extent } else { 0.0 };
    // Whole-cell centering offsets keep a devoxelized grid a fixed point.
    let offset: [f64; 3] = std::array::from_fn(|k| {
        ((span - ((hi[k] - lo[k]) * scale).round_ties_even()) / 2.0).floor()
    });
    let cells = pc
        .points()
        .iter()
        .map(|p| {
            std::array::from_fn(|k| {
                (((p[k] - lo[k]) * scale).round_ties_even() + offset[k]).clamp(0.0, span) as u32
            })
        })
        .collect();
    VoxelGrid::new(r, cells)
}

/// One point per occupied cell at its integer coordinate, z fastest.
pub fn devoxelize(grid: &VoxelGrid) -> PointCloud {
    let points = grid
        .occupied()
        .iter()
        .map(|c| c.map(|v| v as f64))
        .collect();
    PointCloud::new(points).expect("integer coordinates are finite")
}
