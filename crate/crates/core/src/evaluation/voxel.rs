//! Occupancy voxelization by ray parity.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Mesh;

/// Resolution used for scoring.
pub const VOXEL_RESOLUTION: usize = 32;

/// Axis-aligned cube `[min, max]^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { min: -1.0, max: 1.0 }
    }
}

impl Bounds {
    pub fn cell_size(&self, resolution: usize) -> f64 {
        (self.max - self.min) / resolution as f64
    }

    pub fn cell_center(&self, resolution: usize, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.cell_size(resolution)
    }
}

/// Boolean occupancy grid, indexed `[(x * r + y) * r + z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub resolution: usize,
    pub bounds: Bounds,
    pub occupancy: Vec<bool>,
    /// Set when some edge is not shared by exactly two faces.
    pub non_watertight: bool,
}

impl VoxelGrid {
    pub fn empty(resolution: usize, bounds: Bounds) -> Self {
        VoxelGrid {
            resolution,
            bounds,
            occupancy: vec![false; resolution.pow(3)],
            non_watertight: false,
        }
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.resolution + y) * self.resolution + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occupancy[self.index(x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.occupancy.len() as f64
    }
}

pub fn is_watertight(mesh: &Mesh) -> bool {
    let mut edges: HashMap<(u32, u32), usize> = HashMap::new();
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *edges.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    edges.values().all(|&n| n == 2)
}

/// Ray offsets tried, in units of one cell, when a ray grazes an edge or a
/// vertex. The directions are irrational-ish so a second tie is unlikely.
const JITTER: [[f64; 2]; 6] = [
    [0.0, 0.0],
    [1.3e-6, 0.7e-6],
    [-0.9e-6, 1.7e-6],
    [2.3e-6, -1.1e-6],
    [-3.1e-6, -2.9e-6],
    [5.3e-6, 3.7e-6],
];

/// Classifies a hit of the +x ray through `(y, z)` against one triangle.
enum Hit {
    Miss,
    At(f64),
    Degenerate,
}

fn ray_triangle(tri: [[f64; 3]; 3], y: f64, z: f64, eps: f64) -> Hit {
    let [a, b, c] = tri;
    // project onto the yz plane
    let det = (b[1] - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (b[2] - a[2]);
    let scale = (b[1] - a[1]).abs() + (c[1] - a[1]).abs() + (b[2] - a[2]).abs() + (c[2] - a[2]).abs();
    if det.abs() <= 1e-14 * scale * scale {
        // parallel to the ray: contributes no crossing
        return Hit::Miss;
    }
    let w1 = ((y - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (z - a[2])) / det;
    let w2 = ((b[1] - a[1]) * (z - a[2]) - (y - a[1]) * (b[2] - a[2])) / det;
    let w0 = 1.0 - w1 - w2;
    let lo = w0.min(w1).min(w2);
    if lo < -eps {
        return Hit::Miss;
    }
    if lo <= eps {
        return Hit::Degenerate;
    }
    Hit::At(w0 * a[0] + w1 * b[0] + w2 * c[0])
}

/// Sorted x coordinates where the +x line through `(y, z)` crosses the mesh,
/// or `None` if the line grazes an edge or vertex.
fn crossings(tris: &[[[f64; 3]; 3]], y: f64, z: f64) -> Option<Vec<f64>> {
    let mut hits = Vec::new();
    for tri in tris {
        let (ylo, yhi) = (tri[0][1].min(tri[1][1]).min(tri[2][1]), tri[0][1].max(tri[1][1]).max(tri[2][1]));
        let (zlo, zhi) = (tri[0][2].min(tri[1][2]).min(tri[2][2]), tri[0][2].max(tri[1][2]).max(tri[2][2]));
        if y < ylo - 1e-9 || y > yhi + 1e-9 || z < zlo - 1e-9 || z > zhi + 1e-9 {
            continue;
        }
        match ray_triangle(*tri, y, z, 1e-10) {
            Hit::Miss => {}
            Hit::At(x) => hits.push(x),
            Hit::Degenerate => return None,
        }
    }
    hits.sort_by(f64::total_cmp);
    Some(hits)
}

/// Voxelizes `mesh` at the scoring resolution.
pub fn voxelize(mesh: &Mesh, bounds: Bounds) -> VoxelGrid {
    voxelize_at(mesh, bounds, VOXEL_RESOLUTION)
}

/// A cell is occupied iff its center is inside the mesh, decided by the
/// parity of crossings along the +x ray from the center. Rays that graze
/// an edge or vertex are re-cast with a tiny offset.
pub fn voxelize_at(mesh: &Mesh, bounds: Bounds, resolution: usize) -> VoxelGrid {
    let mut grid = VoxelGrid::empty(resolution, bounds);
    grid.non_watertight = !is_watertight(mesh);
    if mesh.faces.is_empty() {
        return grid;
    }
    let tris: Vec<[[f64; 3]; 3]> = mesh.faces.iter().map(|f| f.map(|i| mesh.vertices[i as usize])).collect();
    let h = bounds.cell_size(resolution);
    for yi in 0..resolution {
        for zi in 0..resolution {
            let (y, z) = (bounds.cell_center(resolution, yi), bounds.cell_center(resolution, zi));
            let hits = JITTER
                .iter()
                .find_map(|j| crossings(&tris, y + j[0] * h, z + j[1] * h))
                .unwrap_or_else(|| {
                    log::warn!("voxelizer: ray at y={y}, z={z} stayed degenerate after jitter");
                    Vec::new()
                });
            if hits.is_empty() {
                continue;
            }
            for xi in 0..resolution {
                let x = bounds.cell_center(resolution, xi);
                let beyond = hits.len() - hits.partition_point(|&hx| hx <= x);
                if beyond % 2 == 1 {
                    let idx = grid.index(xi, yi, zi);
                    grid.occupancy[idx] = true;
                }
            }
        }
    }
    grid
}

/// `|a & b| / |a | b|`, zero when both grids are empty.
pub fn iou3d(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    if a.resolution != b.resolution || a.bounds != b.bounds {
        return Err(Error::shape(
            format!("{}^3 grid over {:?}", a.resolution, a.bounds),
            format!("{}^3 grid over {:?}", b.resolution, b.bounds),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.occupancy.iter().zip(&b.occupancy) {
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Binary IoU of two silhouettes thresholded at 0.5.
pub fn silhouette_iou(a: &[f32], b: &[f32]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.iter().zip(b) {
        let (p, q) = (p > 0.5, q > 0.5);
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
