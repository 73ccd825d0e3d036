//! Finite-difference verification of [`Renderer::backward`].

use super::{Renderer, ViewSpec};
use crate::geometry::Mesh;

/// Outcome of comparing the analytic Jacobian of every RGBA output with
/// respect to every vertex coordinate against central differences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    /// Number of (output, coordinate) pairs.
    pub entries: usize,
    /// Pairs that agree at the base step within the tolerance.
    pub matched: usize,
    /// Pairs that only agree once the step is refined. Signed squared edge
    /// distance is C1 but not C2 across edges and has a crease along each
    /// triangle's medial axis, so a step that straddles one of those loci
    /// gives an inaccurate difference quotient even for a correct gradient.
    pub refined: usize,
    /// Pairs that never agree.
    pub mismatched: usize,
    /// Largest relative error among the pairs counted in `matched`.
    pub worst_matched: f64,
}

impl GradCheckReport {
    pub fn all_verified(&self) -> bool {
        self.mismatched == 0 && self.matched + self.refined == self.entries
    }
}

fn central_difference(r: &Renderer, mesh: &Mesh, view: &ViewSpec, coord: usize, h: f64) -> Vec<f64> {
    let (vi, k) = (coord / 3, coord % 3);
    let mut plus = mesh.clone();
    plus.vertices[vi][k] += h;
    let mut minus = mesh.clone();
    minus.vertices[vi][k] -= h;
    let fp = r.forward(&plus, view).rgba;
    let fm = r.forward(&minus, view).rgba;
    fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks every pixel-vs-vertex derivative against a central difference with
/// step `h`. A pair that misses `tol` is retried with steps `h/10`, `h/100`
/// and `h/1000`, and counts as refined when some smaller step agrees.
pub fn check_vertex_gradients(
    renderer: &Renderer,
    mesh: &Mesh,
    view: &ViewSpec,
    h: f64,
    tol: f64,
) -> GradCheckReport {
    let out = renderer.forward(mesh, view);
    let n_out = out.rgba.len();
    let n_coord = mesh.vertices.len() * 3;
    // jac[o][c], one backward pass per output
    let mut onehot = vec![0.0; n_out];
    let jac: Vec<Vec<f64>> = (0..n_out)
        .map(|o| {
            onehot[o] = 1.0;
            let g = renderer.backward(&out, mesh.vertices.len(), &onehot);
            onehot[o] = 0.0;
            g.into_iter().flatten().collect()
        })
        .collect();

    let mut report = GradCheckReport {
        entries: n_out * n_coord,
        ..Default::default()
    };
    for coord in 0..n_coord {
        let base = central_difference(renderer, mesh, view, coord, h);
        let finer: Vec<Vec<f64>> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|d| central_difference(renderer, mesh, view, coord, h / d))
            .collect();
        for (o, row) in jac.iter().enumerate() {
            let an = row[coord];
            let err = relative_error(an, base[o]);
            if err <= tol {
                report.matched += 1;
                report.worst_matched = report.worst_matched.max(err);
            } else if finer.iter().any(|fd| relative_error(an, fd[o]) <= tol) {
                report.refined += 1;
            } else {
                report.mismatched += 1;
            }
        }
    }
    report
}
