use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GeometryError, PointCloud, Result, TriangleMesh};

/// Draws `n` points uniformly by area from the mesh surface.
///
/// A triangle is picked with probability proportional to its area, then a
/// point inside it from barycentric `(u, v)`, reflected to `(1-u, 1-v)` when
/// `u + v > 1`. The same seed always yields the same cloud.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Ok(PointCloud::default());
    }
    let areas: Vec<f64> = (0..mesh.faces().len())
        .map(|f| mesh.triangle_area(f))
        .collect();
    let pick = WeightedIndex::new(&areas).map_err(|e| {
        GeometryError::Sampling(format!("mesh has no positive-area triangle ({e})"))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let [a, b, c] = mesh.triangle(pick.sample(&mut rng));
            let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
            if u + v > 1.0 {
                (u, v) = (1.0 - u, 1.0 - v);
            }
            std::array::from_fn(|k| a[k] + u * (b[k] - a[k]) + v * (c[k] - a[k]))
        })
        .collect();
    PointCloud::new(points)
}
