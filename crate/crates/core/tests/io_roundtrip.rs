use pcgc::geometry::{
    load_mesh, load_point_cloud, sample_surface, save_point_cloud, voxelize, PointCloud,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1e3..1e3)))
            .collect(),
    )
    .unwrap()
}

#[test]
fn ply_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let pc = random_cloud(1000, 42);
    for binary in [true, false] {
        let path = dir.path().join(format!("c{binary}.ply"));
        save_point_cloud(&pc, &path, binary).unwrap();
        let back = load_point_cloud(&path).unwrap();
        let exact = back
            .points()
            .iter()
            .zip(pc.points())
            .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(exact && back.len() == 1000, "binary={binary}");
    }
}

#[test]
fn single_precision_clouds_stay_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let pts: Vec<[f64; 3]> = random_cloud(50, 1)
        .points()
        .iter()
        .map(|p| p.map(|v| v as f32 as f64))
        .collect();
    let pc = PointCloud::new(pts).unwrap();
    let path = dir.path().join("f.ply");
    save_point_cloud(&pc, &path, true).unwrap();
    // Three 4-byte floats per vertex after the header.
    let bytes = std::fs::read(&path).unwrap();
    let body = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .unwrap()
        + 11;
    assert_eq!(bytes.len() - body, 50 * 12);
    assert_eq!(load_point_cloud(&path).unwrap(), pc);
}

#[test]
fn mesh_to_grid_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tet.off");
    std::fs::write(
        &path,
        "OFF\n# tetrahedron\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n",
    )
    .unwrap();
    let mesh = load_mesh(&path).unwrap();
    let a = sample_surface(&mesh, 20_000, 3).unwrap();
    let b = sample_surface(&mesh, 20_000, 3).unwrap();
    assert_eq!(a, b);
    let grid = voxelize(&a, 32).unwrap();
    // The corners of the unit tetrahedron reach the lattice corners.
    assert!(grid.contains([0, 0, 0]));
    assert!(grid.contains([31, 0, 0]) && grid.contains([0, 31, 0]) && grid.contains([0, 0, 31]));
    assert!(grid
        .occupied()
        .iter()
        .all(|c| c.iter().sum::<u32>() <= 31 + 2));
}
