//! Oracles shared by unit tests in several modules.

use crate::geometry::Mesh;
use crate::renderer::{pixel_center, Camera, ViewSpec};

/// Hard point-in-triangle rasterization of the projected mesh.
pub(crate) fn hard_silhouette(mesh: &Mesh, view: &ViewSpec) -> Vec<bool> {
    let cam = Camera::new(view);
    let proj: Vec<[f64; 2]> = mesh
        .vertices
        .iter()
        .map(|&v| {
            let c = cam.to_camera(v);
            [c[0] / (c[2] * cam.tan_half), c[1] / (c[2] * cam.tan_half)]
        })
        .collect();
    let s = view.image_size;
    let mut out = vec![false; s * s];
    for row in 0..s {
        for col in 0..s {
            let p = pixel_center(s, row, col);
            out[row * s + col] = mesh.faces.iter().any(|f| {
                let [a, b, c] = f.map(|i| proj[i as usize]);
                // barycentric coordinates
                let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
                if det == 0.0 {
                    return false;
                }
                let l1 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
                let l2 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
                let l3 = 1.0 - l1 - l2;
                l1 >= 0.0 && l2 >= 0.0 && l3 >= 0.0
            });
        }
    }
    out
}
