//! Wavefront OBJ import/export (positions and triangular faces only).

use std::fmt::Write as _;
use std::path::Path;

use super::Mesh;
use crate::error::{Error, Result};

pub fn to_obj_string(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 32 + mesh.faces.len() * 16);
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {:.9} {:.9} {:.9}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

/// Parses `v` and `f` records. Polygonal faces are fan-triangulated and
/// `v/vt/vn` index forms are accepted; everything else is ignored.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::InvalidMesh(format!("line {}: {e}", lineno + 1)))?;
                if coords.len() != 3 {
                    return Err(Error::InvalidMesh(format!(
                        "line {}: vertex needs 3 coordinates",
                        lineno + 1
                    )));
                }
                vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|s| {
                        let first = s.split('/').next().unwrap_or("");
                        first.parse::<i64>().map_err(|e| {
                            Error::InvalidMesh(format!("line {}: {e}", lineno + 1))
                        })
                    })
                    .map(|r| {
                        r.and_then(|i| {
                            let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                            u32::try_from(resolved).map_err(|_| {
                                Error::InvalidMesh(format!("line {}: bad index {i}", lineno + 1))
                            })
                        })
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::InvalidMesh(format!(
                        "line {}: face needs at least 3 vertices",
                        lineno + 1
                    )));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

pub fn write_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, to_obj_string(mesh)).map_err(|e| Error::io(path, e))
}

pub fn read_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_sphere_template;

    #[test]
    fn roundtrip_preserves_topology_and_positions() {
        let m = make_sphere_template();
        let back = parse_obj(&to_obj_string(&m)).unwrap();
        assert_eq!(back.faces, m.faces);
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn quads_are_triangulated() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn out_of_range_face_is_rejected() {
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }
}
