#![allow(dead_code)]

use std::path::PathBuf;

use pcgc::geometry::VoxelGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A few random blobs of voxels, reproducible from `seed`.
pub fn random_grid(r: usize, seed: u64) -> VoxelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = Vec::new();
    for _ in 0..rng.gen_range(1..5) {
        let center: [i64; 3] = std::array::from_fn(|_| rng.gen_range(0..r as i64));
        let radius = rng.gen_range(1..=(r as i64 / 4).max(1));
        for _ in 0..rng.gen_range(1..200) {
            let c =
                center.map(|v| (v + rng.gen_range(-radius..=radius)).clamp(0, r as i64 - 1) as u32);
            cells.push(c);
        }
    }
    VoxelGrid::new(r, cells).unwrap()
}

/// Compares `bytes` with a stored golden file. With `PCGC_BLESS` set the
/// file is rewritten instead.
pub fn check_golden(name: &str, bytes: &[u8]) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name);
    if std::env::var_os("PCGC_BLESS").is_some() {
        std::fs::write(&path, bytes).unwrap();
        return;
    }
    let golden = std::fs::read(&path).unwrap_or_else(|e| {
        panic!(
            "{}: {e}; rerun with PCGC_BLESS=1 to create it",
            path.display()
        )
    });
    assert!(
        golden == bytes,
        "{} differs from the encoder output",
        path.display()
    );
}
