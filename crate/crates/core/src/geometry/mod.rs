//! Triangle meshes, the sphere template and mesh regularization.
//!
//! Reconstructed shapes are deformations of a fixed icosphere: the network
//! predicts one bounded offset per template vertex plus a global translation,
//! so every prediction shares the template's face list.

pub mod obj;
pub mod primitives;
mod regularize;
pub mod vec3;

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use vec3::Vec3;

pub use regularize::{MeshRegularizer, RegularizerTerms};

/// Number of vertices of the reconstruction template.
pub const TEMPLATE_VERTICES: usize = 642;
/// Number of faces of the reconstruction template.
pub const TEMPLATE_FACES: usize = 1280;
/// Size of the raw offset vector decoded into a template deformation.
pub const OFFSET_DIM: usize = TEMPLATE_VERTICES * 3 + 3;
/// Per-vertex offsets are squashed into `(-OFFSET_BOUND, OFFSET_BOUND)`.
pub const OFFSET_BOUND: f64 = 1.0;

/// A triangle mesh with `f64` vertex positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Mesh { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Mesh {
            vertices: Vec::new(),
            faces: Vec::new(),
        }
    }

    /// Checks that every face references three distinct, in-range vertices.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {i} {f:?} references a vertex outside 0..{n}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {i} {f:?} is degenerate")));
            }
        }
        Ok(())
    }

    pub fn num_edges(&self) -> usize {
        let mut edges = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.num_edges() as i64 + self.faces.len() as i64
    }

    pub fn translated(&self, t: Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|&v| vec3::add(v, t)).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn scaled(&self, s: f64) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(|&v| vec3::scale(v, s)).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn flat_vertices(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| v.iter().copied()).collect()
    }
}

/// Builds the canonical reconstruction template: an icosahedron subdivided
/// three times and projected onto the unit sphere (642 vertices, 1280 faces).
///
/// Faces are wound counter-clockwise when seen from outside.
pub fn make_sphere_template() -> Mesh {
    icosphere(3)
}

/// Unit icosphere with `levels` rounds of 1-to-4 subdivision.
pub fn icosphere(levels: usize) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(vec3::normalize)
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = vec3::scale(
                        vec3::add(vertices[a as usize], vertices[b as usize]),
                        0.5,
                    );
                    vertices.push(vec3::normalize(m));
                    (vertices.len() - 1) as u32
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }
    Mesh { vertices, faces }
}

/// Raw reconstruction-network output split into per-vertex offsets and a
/// global translation.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexOffsets {
    pub per_vertex: Vec<[f32; 3]>,
    pub global: [f32; 3],
}

impl VertexOffsets {
    pub fn zeros(num_vertices: usize) -> Self {
        VertexOffsets {
            per_vertex: vec![[0.0; 3]; num_vertices],
            global: [0.0; 3],
        }
    }

    /// Splits a flat `3V + 3` vector: the first `3V` entries are per-vertex
    /// offsets, the last three the global translation.
    pub fn from_flat(raw: &[f32], num_vertices: usize) -> Result<Self> {
        if raw.len() != num_vertices * 3 + 3 {
            return Err(Error::shape(num_vertices * 3 + 3, raw.len()));
        }
        let per_vertex = raw[..num_vertices * 3]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        let g = &raw[num_vertices * 3..];
        Ok(VertexOffsets {
            per_vertex,
            global: [g[0], g[1], g[2]],
        })
    }
}

/// Deforms `template` by `offsets`: `v = t + OFFSET_BOUND * tanh(o) + g`.
pub fn decode_mesh(offsets: &VertexOffsets, template: &Mesh) -> Result<Mesh> {
    if offsets.per_vertex.len() != template.vertices.len() {
        return Err(Error::shape(
            format!("{} vertex offsets", template.vertices.len()),
            offsets.per_vertex.len(),
        ));
    }
    let g = offsets.global.map(f64::from);
    let vertices = template
        .vertices
        .iter()
        .zip(&offsets.per_vertex)
        .map(|(t, o)| {
            let mut v = *t;
            for k in 0..3 {
                v[k] += OFFSET_BOUND * f64::from(o[k]).tanh() + g[k];
            }
            v
        })
        .collect();
    Ok(Mesh {
        vertices,
        faces: template.faces.clone(),
    })
}

/// Gradient of a scalar with respect to the flat raw offsets, given its
/// gradient with respect to the decoded vertex positions.
pub fn decode_mesh_backward(offsets: &VertexOffsets, grad_vertices: &[Vec3]) -> Vec<f32> {
    let n = offsets.per_vertex.len();
    let mut out = vec![0f32; n * 3 + 3];
    let mut g_global = [0f64; 3];
    for (i, (o, g)) in offsets.per_vertex.iter().zip(grad_vertices).enumerate() {
        for k in 0..3 {
            let t = f64::from(o[k]).tanh();
            out[i * 3 + k] = (g[k] * OFFSET_BOUND * (1.0 - t * t)) as f32;
            g_global[k] += g[k];
        }
    }
    for k in 0..3 {
        out[n * 3 + k] = g_global[k] as f32;
    }
    out
}

/// Connectivity derived from a face list: one-ring neighbours and the face
/// pairs sharing each interior edge.
#[derive(Debug, Clone)]
pub struct Topology {
    pub neighbors: Vec<Vec<u32>>,
    /// `(face_a, face_b)` for every edge shared by exactly two faces.
    pub edge_faces: Vec<(u32, u32)>,
}

impl Topology {
    pub fn new(num_vertices: usize, faces: &[[u32; 3]]) -> Self {
        let mut nb: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); num_vertices];
        let mut edges: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                nb[a as usize].insert(b);
                nb[b as usize].insert(a);
                edges.entry((a.min(b), a.max(b))).or_default().push(fi as u32);
            }
        }
        let mut edge_faces: Vec<((u32, u32), (u32, u32))> = edges
            .into_iter()
            .filter(|(_, fs)| fs.len() == 2)
            .map(|(e, fs)| (e, (fs[0], fs[1])))
            .collect();
        edge_faces.sort_unstable();
        Topology {
            neighbors: nb.into_iter().map(|s| s.into_iter().collect()).collect(),
            edge_faces: edge_faces.into_iter().map(|(_, f)| f).collect(),
        }
    }

    pub fn of(mesh: &Mesh) -> Self {
        Topology::new(mesh.vertices.len(), &mesh.faces)
    }
}
