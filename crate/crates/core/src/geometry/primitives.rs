//! Closed primitive shapes used to synthesize toy datasets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::vec3::Vec3;
use super::{icosphere, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cube,
    Sphere,
    Pyramid,
    Torus,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Cube, Shape::Sphere, Shape::Pyramid, Shape::Torus];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Sphere => "sphere",
            Shape::Pyramid => "pyramid",
            Shape::Torus => "torus",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Shape::ALL
            .into_iter()
            .find(|shape| shape.name() == s)
            .ok_or_else(|| format!("unknown shape '{s}' (expected cube, sphere, pyramid or torus)"))
    }
}

/// Axis-aligned box centered at the origin with the given half extents.
pub fn cuboid(half: Vec3) -> Mesh {
    let vertices = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -half[0] } else { half[0] },
                if i & 2 == 0 { -half[1] } else { half[1] },
                if i & 4 == 0 { -half[2] } else { half[2] },
            ]
        })
        .collect();
    let quads = [
        [0, 4, 6, 2],
        [1, 3, 7, 5],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 2, 3, 1],
        [4, 5, 7, 6],
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    Mesh { vertices, faces }
}

pub fn cube(half: f64) -> Mesh {
    cuboid([half; 3])
}

pub fn sphere(radius: f64) -> Mesh {
    icosphere(2).scaled(radius)
}

/// Square pyramid of base half-width `half_width` and total height `height`,
/// centered vertically on the origin.
pub fn pyramid(half_width: f64, height: f64) -> Mesh {
    let (w, y0, y1) = (half_width, -height / 2.0, height / 2.0);
    let vertices = vec![
        [-w, y0, -w],
        [w, y0, -w],
        [w, y0, w],
        [-w, y0, w],
        [0.0, y1, 0.0],
    ];
    let faces = vec![
        [0, 1, 2],
        [0, 2, 3],
        [0, 4, 1],
        [1, 4, 2],
        [2, 4, 3],
        [3, 4, 0],
    ];
    Mesh { vertices, faces }
}

/// Torus around the y axis.
pub fn torus(major: f64, minor: f64, segments: usize, rings: usize) -> Mesh {
    let mut vertices = Vec::with_capacity(segments * rings);
    for i in 0..segments {
        let u = 2.0 * PI * i as f64 / segments as f64;
        for j in 0..rings {
            let v = 2.0 * PI * j as f64 / rings as f64;
            let r = major + minor * v.cos();
            vertices.push([r * u.cos(), minor * v.sin(), r * u.sin()]);
        }
    }
    let idx = |i: usize, j: usize| ((i % segments) * rings + j % rings) as u32;
    let mut faces = Vec::with_capacity(segments * rings * 2);
    for i in 0..segments {
        for j in 0..rings {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, c, b]);
            faces.push([a, d, c]);
        }
    }
    Mesh { vertices, faces }
}

/// Rotates `mesh` about the vertical axis by `angle` radians.
pub fn rotate_y(mesh: &Mesh, angle: f64) -> Mesh {
    let (s, c) = angle.sin_cos();
    Mesh {
        vertices: mesh
            .vertices
            .iter()
            .map(|v| [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]])
            .collect(),
        faces: mesh.faces.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vec3;

    fn signed_volume(m: &Mesh) -> f64 {
        m.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| m.vertices[i as usize]);
                vec3::dot(a, vec3::cross(b, c)) / 6.0
            })
            .sum()
    }

    #[test]
    fn primitives_are_closed_and_outward() {
        let cases = [
            (cube(0.5), 1.0, 2),
            (cuboid([0.1, 0.2, 0.3]), 0.048, 2),
            (pyramid(0.5, 1.0), 1.0 / 3.0, 2),
            (torus(0.5, 0.2, 48, 24), 2.0 * PI * PI * 0.5 * 0.04, 0),
        ];
        for (mesh, volume, euler) in cases {
            mesh.validate().unwrap();
            assert_eq!(mesh.euler_characteristic(), euler);
            let v = signed_volume(&mesh);
            assert!(v > 0.0, "inward-facing primitive");
            assert!((v - volume).abs() / volume < 0.05, "{v} vs {volume}");
        }
        assert!(signed_volume(&sphere(0.5)) > 0.0);
    }

    #[test]
    fn shape_names_roundtrip() {
        for s in Shape::ALL {
            assert_eq!(s.name().parse::<Shape>().unwrap(), s);
        }
        assert!("cone".parse::<Shape>().is_err());
    }
}
