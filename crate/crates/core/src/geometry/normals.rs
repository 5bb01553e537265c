use nalgebra::{Matrix3, SymmetricEigen};

use super::{GeometryError, KdTree, Point3, PointCloud, Result};

/// Components whose magnitudes differ by less than this count as tied when
/// picking the component that fixes a normal's sign.
const SIGN_TIE: f64 = 1e-9;

/// PCA normals from each point and its `k` nearest neighbours.
///
/// The normal is the eigenvector of the smallest covariance eigenvalue,
/// flipped so that its largest-magnitude component is non-negative (the
/// lowest axis wins near-ties).
pub fn estimate_normals(pc: &PointCloud, k: usize) -> Result<PointCloud> {
    if k < 3 {
        return Err(GeometryError::Argument(format!("k must be >= 3, got {k}")));
    }
    if pc.len() < k + 1 {
        return Err(GeometryError::Argument(format!(
            "{} points cannot supply {k} neighbours each",
            pc.len()
        )));
    }
    let tree = KdTree::new(pc.points());
    let normals = pc
        .points()
        .iter()
        .map(|p| {
            let hood: Vec<Point3> = tree
                .knn(p, k + 1)
                .iter()
                .map(|&(i, _)| pc.points()[i])
                .collect();
            plane_normal(&hood)
        })
        .collect();
    pc.clone().without_normals().with_normals(normals)
}

fn plane_normal(points: &[Point3]) -> Point3 {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for k in 0..3 {
            mean[k] += p[k] / n;
        }
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let smallest = (0..3)
        .min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .unwrap();
    let v = eig.eigenvectors.column(smallest);
    let len = v.norm();
    let mut normal = [v[0] / len, v[1] / len, v[2] / len];
    let peak = normal.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let lead = normal
        .iter()
        .position(|c| c.abs() >= peak - SIGN_TIE)
        .unwrap();
    if normal[lead] < 0.0 {
        normal = normal.map(|c| -c);
    }
    normal
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(map: impl Fn(f64, f64) -> Point3) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = (0..400)
            .map(|_| map(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
            .collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn horizontal_plane() {
        let pc = estimate_normals(&random_plane(|a, b| [a, b, 0.0]), 8).unwrap();
        for n in pc.normals().unwrap() {
            assert!(
                (n[0]).abs() < 1e-6 && n[1].abs() < 1e-6 && (n[2] - 1.0).abs() < 1e-6,
                "{n:?}"
            );
        }
    }

    #[test]
    fn diagonal_plane() {
        let pc = estimate_normals(&random_plane(|a, b| [a, a, b]), 8).unwrap();
        let h = 0.5f64.sqrt();
        for n in pc.normals().unwrap() {
            // Equal magnitudes in x and y: the lower axis decides the sign.
            assert!(
                (n[0] - h).abs() < 1e-6 && (n[1] + h).abs() < 1e-6 && n[2].abs() < 1e-6,
                "{n:?}"
            );
        }
    }

    #[test]
    fn tilted_plane_sign_rule() {
        // Normal of z = 2x + 0.5y is (-2, -0.5, 1)/|.|; largest component x.
        let pc = estimate_normals(&random_plane(|a, b| [a, b, 2.0 * a + 0.5 * b]), 6).unwrap();
        let len = (4.0f64 + 0.25 + 1.0).sqrt();
        let expect = [2.0 / len, 0.5 / len, -1.0 / len];
        for n in pc.normals().unwrap() {
            for k in 0..3 {
                assert!((n[k] - expect[k]).abs() < 1e-6, "{n:?}");
            }
        }
    }

    #[test]
    fn too_few_points() {
        let pc = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        assert!(estimate_normals(&pc, 3).is_err());
        assert!(estimate_normals(&random_plane(|a, b| [a, b, 0.0]), 2).is_err());
    }
}
