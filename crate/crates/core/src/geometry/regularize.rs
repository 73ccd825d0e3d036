use serde::{Deserialize, Serialize};

use super::vec3::{self, Vec3};
use super::{Mesh, Topology};

/// Laplacian smoothing plus face-normal flatness.
///
/// * Laplacian: `sum_i |v_i - mean_{j in N(i)} v_j|^2` over all vertices
///   (uniform weights, no normalization by vertex count). It is quadratic in
///   the coordinates, so scaling a mesh by `s` scales the term by `s^2`.
/// * Flatness: `sum_e (1 - n_a . n_b)^2` over interior edges, with `n_a`,
///   `n_b` the unit normals of the two adjacent faces. Scale invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshRegularizer {
    pub laplacian_weight: f64,
    pub flatness_weight: f64,
}

impl Default for MeshRegularizer {
    fn default() -> Self {
        MeshRegularizer {
            laplacian_weight: 3e-3,
            flatness_weight: 3e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegularizerTerms {
    pub laplacian: f64,
    pub flatness: f64,
    /// Weighted sum of the two terms.
    pub total: f64,
}

impl MeshRegularizer {
    pub fn value(&self, mesh: &Mesh, topo: &Topology) -> RegularizerTerms {
        let laplacian = laplacian(mesh, topo, None);
        let flatness = flatness(mesh, topo, None);
        RegularizerTerms {
            laplacian,
            flatness,
            total: self.laplacian_weight * laplacian + self.flatness_weight * flatness,
        }
    }

    /// Weighted value and its gradient with respect to every vertex.
    pub fn value_and_grad(&self, mesh: &Mesh, topo: &Topology) -> (RegularizerTerms, Vec<Vec3>) {
        let mut g_lap = vec![[0.0; 3]; mesh.vertices.len()];
        let mut g_flat = vec![[0.0; 3]; mesh.vertices.len()];
        let laplacian = laplacian(mesh, topo, Some(&mut g_lap));
        let flatness = flatness(mesh, topo, Some(&mut g_flat));
        let grad = g_lap
            .iter()
            .zip(&g_flat)
            .map(|(a, b)| {
                vec3::add(
                    vec3::scale(*a, self.laplacian_weight),
                    vec3::scale(*b, self.flatness_weight),
                )
            })
            .collect();
        let terms = RegularizerTerms {
            laplacian,
            flatness,
            total: self.laplacian_weight * laplacian + self.flatness_weight * flatness,
        };
        (terms, grad)
    }
}

fn laplacian(mesh: &Mesh, topo: &Topology, grad: Option<&mut Vec<Vec3>>) -> f64 {
    let v = &mesh.vertices;
    let deltas: Vec<Vec3> = topo
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            if nb.is_empty() {
                return [0.0; 3];
            }
            let mut mean = [0.0; 3];
            for &j in nb {
                vec3::add_assign(&mut mean, v[j as usize]);
            }
            vec3::sub(v[i], vec3::scale(mean, 1.0 / nb.len() as f64))
        })
        .collect();
    let value = deltas.iter().map(|d| vec3::dot(*d, *d)).sum();
    if let Some(g) = grad {
        for (i, nb) in topo.neighbors.iter().enumerate() {
            if nb.is_empty() {
                continue;
            }
            let d = deltas[i];
            vec3::add_assign(&mut g[i], vec3::scale(d, 2.0));
            let w = -2.0 / nb.len() as f64;
            for &j in nb {
                vec3::add_assign(&mut g[j as usize], vec3::scale(d, w));
            }
        }
    }
    value
}

fn flatness(mesh: &Mesh, topo: &Topology, grad: Option<&mut Vec<Vec3>>) -> f64 {
    let v = &mesh.vertices;
    let corners = |f: u32| mesh.faces[f as usize].map(|i| v[i as usize]);
    let normals: Vec<Vec3> = mesh
        .faces
        .iter()
        .map(|f| {
            let [a, b, c] = f.map(|i| v[i as usize]);
            vec3::face_normal(a, b, c).0
        })
        .collect();
    let mut value = 0.0;
    let mut g_normals = vec![[0.0; 3]; normals.len()];
    for &(fa, fb) in &topo.edge_faces {
        let (na, nb) = (normals[fa as usize], normals[fb as usize]);
        let r = 1.0 - vec3::dot(na, nb);
        value += r * r;
        vec3::add_assign(&mut g_normals[fa as usize], vec3::scale(nb, -2.0 * r));
        vec3::add_assign(&mut g_normals[fb as usize], vec3::scale(na, -2.0 * r));
    }
    if let Some(g) = grad {
        for (fi, gn) in g_normals.iter().enumerate() {
            let [a, b, c] = corners(fi as u32);
            let gv = vec3::face_normal_backward(a, b, c, *gn);
            for (k, &vi) in mesh.faces[fi].iter().enumerate() {
                vec3::add_assign(&mut g[vi as usize], gv[k]);
            }
        }
    }
    value
}
