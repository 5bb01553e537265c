//! OFF meshes.
//!
//! Grammar: an `OFF` magic line, then `nv nf ne`, then `nv` vertex lines
//! `x y z`, then `nf` face lines `n i0 .. i(n-1)`. Blank lines and `#`
//! comments are ignored. Polygons are fan-triangulated around their first
//! vertex. Some published datasets glue the counts onto the magic
//! (`OFF490 518 0`); that form is accepted too.

use std::fs;
use std::path::Path;

use super::{GeometryError, Result, TriangleMesh};

fn parse_err(line: usize, msg: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn parse_off(text: &str) -> Result<TriangleMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (_, first) = lines
        .next()
        .ok_or_else(|| GeometryError::Format("empty file".into()))?;
    let rest = first
        .strip_prefix("OFF")
        .ok_or_else(|| GeometryError::Format(format!("expected OFF magic, found '{first}'")))?
        .trim();
    let (count_line, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| GeometryError::Format("missing count line".into()))?
    } else {
        (1, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(count_line, format!("bad count line '{counts}'")))?;
    let (nv, nf) = match counts[..] {
        [nv, nf] | [nv, nf, _] => (nv, nf),
        _ => return Err(parse_err(count_line, "expected 'nv nf ne'")),
    };

    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let (ln, line) = lines.next().ok_or_else(|| {
            GeometryError::Format(format!("file ends after {i} of {nv} vertices"))
        })?;
        let v: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(ln, format!("bad vertex '{line}'")))?;
        let [x, y, z] = v[..] else {
            return Err(parse_err(
                ln,
                format!("vertex needs 3 coordinates: '{line}'"),
            ));
        };
        vertices.push([x, y, z]);
    }

    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| GeometryError::Format(format!("file ends after {i} of {nf} faces")))?;
        let idx: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(ln, format!("bad face '{line}'")))?;
        let (&n, rest) = idx
            .split_first()
            .ok_or_else(|| parse_err(ln, "empty face"))?;
        if n < 3 || rest.len() < n {
            return Err(parse_err(
                ln,
                format!("face declares {n} vertices: '{line}'"),
            ));
        }
        let poly = &rest[..n];
        if let Some(&bad) = poly.iter().find(|&&j| j >= nv) {
            return Err(GeometryError::Schema(format!(
                "line {ln}: vertex index {bad} out of range for {nv} vertices"
            )));
        }
        for k in 1..n - 1 {
            faces.push([poly[0], poly[k], poly[k + 1]]);
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_off(&text)
}
