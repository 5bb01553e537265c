//! Point clouds, voxel grids and triangle meshes, plus their file formats.

mod kdtree;
mod normals;
mod off;
mod ply;
mod sampling;
mod voxel;

pub use kdtree::KdTree;
pub use normals::estimate_normals;
pub use off::{load_mesh, parse_off};
pub use ply::{load_point_cloud, parse_ply, save_point_cloud, write_ply};
pub use sampling::sample_surface;
pub use voxel::{devoxelize, voxelize, VoxelGrid};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

pub type Point3 = [f64; 3];

/// Ordered list of 3D points with optional unit normals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Point3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GeometryError::Argument(format!(
                "non-finite coordinate {p:?}"
            )));
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    /// Attaches normals; they must match the point count and have unit
    /// length within 1e-6.
    pub fn with_normals(mut self, normals: Vec<Point3>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(GeometryError::Argument(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        if let Some(n) = normals.iter().find(|n| (norm(n) - 1.0).abs() > 1e-6) {
            return Err(GeometryError::Argument(format!(
                "normal {n:?} is not unit length"
            )));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Point3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }
}

/// Triangle soup: vertices and vertex-index triples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(f) = faces
            .iter()
            .find(|f| f.iter().any(|&i| i >= vertices.len()))
        {
            return Err(GeometryError::Schema(format!(
                "face {f:?} references a vertex beyond {}",
                vertices.len()
            )));
        }
        if let Some(p) = vertices.iter().find(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GeometryError::Argument(format!("non-finite vertex {p:?}")));
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn triangle(&self, f: usize) -> [Point3; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    pub fn triangle_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * norm(&cross(&sub(&b, &a), &sub(&c, &a)))
    }
}

#[inline]
pub(crate) fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_points() {
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 1.0]]).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::INFINITY, 1.0]]).is_err());
    }

    #[test]
    fn normals_must_match_and_be_unit() {
        let pc = PointCloud::new(vec![[0.0; 3], [1.0; 3]]).unwrap();
        assert!(pc.clone().with_normals(vec![[0.0, 0.0, 1.0]]).is_err());
        assert!(pc
            .clone()
            .with_normals(vec![[0.0, 0.0, 1.0], [0.0, 0.5, 0.0]])
            .is_err());
        assert!(pc
            .with_normals(vec![[0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])
            .is_ok());
    }

    #[test]
    fn mesh_face_indices_checked() {
        let err = TriangleMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 3]]).unwrap_err();
        assert!(matches!(err, GeometryError::Schema(_)));
    }
}
