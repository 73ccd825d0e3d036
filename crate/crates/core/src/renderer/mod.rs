//! Smooth differentiable renderer.
//!
//! Every face contributes a soft coverage probability to every nearby pixel:
//! `D = sigmoid(s * d^2 / smoothing)` where `d` is the screen-space distance
//! from the pixel center to the projected triangle and `s` is `+1` inside and
//! `-1` outside. Coverage is aggregated into alpha with a probabilistic OR
//! (`1 - prod(1 - D)`), and face colors are blended with softmax weights on
//! normalized inverse depth, then premultiplied by alpha over a black
//! background. All computations are in `f64`; [`Renderer::backward`] returns
//! exact gradients with respect to the world-space vertex positions.

mod camera;
pub mod gradcheck;

use serde::{Deserialize, Serialize};

pub use camera::{ViewSpec, DEFAULT_DISTANCE, DEFAULT_ELEVATION, DEFAULT_VIEW_ANGLE};

use crate::geometry::vec3::{self, Vec3};
use crate::geometry::Mesh;
use crate::img::{GrayMap, ImageRGBA};
pub(crate) use camera::Camera;

/// Default smoothing in squared normalized screen units (the image spans
/// `[-1, 1]` in both directions).
pub const DEFAULT_SMOOTHING: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub smoothing: f64,
    /// Softmax temperature on normalized inverse depth.
    pub depth_gamma: f64,
    pub near: f64,
    pub far: f64,
    /// Faces whose outside logit `-d^2 / smoothing` is below `-cutoff` are
    /// skipped for that pixel.
    pub cutoff: f64,
    pub albedo: f64,
    pub ambient: f64,
    pub directional: f64,
    /// Direction towards the light, world space.
    pub light_dir: Vec3,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            smoothing: DEFAULT_SMOOTHING,
            depth_gamma: 1e-4,
            near: 0.1,
            far: 100.0,
            cutoff: 40.0,
            albedo: 0.7,
            ambient: 0.5,
            directional: 0.5,
            light_dir: [0.0, 1.0, 0.0],
        }
    }
}

impl RenderSettings {
    pub fn with_smoothing(smoothing: f64) -> Self {
        RenderSettings {
            smoothing,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct FaceGeom {
    valid: bool,
    screen: [[f64; 2]; 3],
    cam: [Vec3; 3],
    world: [Vec3; 3],
    /// Normalized inverse depth of the face centroid, larger is closer.
    zdepth: f64,
    ndotl: f64,
    shade: f64,
    albedo: Vec3,
}

#[derive(Debug, Clone, Copy, Default)]
struct PixelAgg {
    alpha: f64,
    /// Depth-blended face color before alpha premultiplication.
    blend: Vec3,
    weight_sum: f64,
    zmax: f64,
}

/// Forward result of [`Renderer::forward`], retaining what the backward pass
/// needs.
#[derive(Debug, Clone)]
pub struct Render {
    pub size: usize,
    /// Planar RGBA, `4 * size * size` values.
    pub rgba: Vec<f64>,
    camera: Camera,
    faces: Vec<[u32; 3]>,
    geom: Vec<FaceGeom>,
    /// CSR offsets into `contribs`, one range per pixel.
    offsets: Vec<u32>,
    contribs: Vec<(u32, f64)>,
    pixels: Vec<PixelAgg>,
}

impl Render {
    pub fn to_image(&self) -> ImageRGBA {
        ImageRGBA {
            size: self.size,
            data: self.rgba.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn alpha(&self) -> &[f64] {
        let n = self.size * self.size;
        &self.rgba[3 * n..]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Renderer {
    pub settings: RenderSettings,
}

/// Signed squared distance from `p` to a 2D triangle plus the data needed to
/// differentiate it: which edge is closest and where along it.
#[derive(Debug, Clone, Copy)]
struct EdgeHit {
    signed_d2: f64,
    edge: usize,
    t: f64,
    diff: [f64; 2],
    inside: bool,
}

#[inline]
fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn edge_hit(p: [f64; 2], tri: &[[f64; 2]; 3]) -> EdgeHit {
    let mut best = EdgeHit {
        signed_d2: f64::INFINITY,
        edge: 0,
        t: 0.0,
        diff: [0.0; 2],
        inside: false,
    };
    let mut signs = [0.0; 3];
    for k in 0..3 {
        let a = tri[k];
        let b = tri[(k + 1) % 3];
        let e = [b[0] - a[0], b[1] - a[1]];
        let ap = [p[0] - a[0], p[1] - a[1]];
        signs[k] = cross2(e, ap);
        let len2 = e[0] * e[0] + e[1] * e[1];
        let t = if len2 > 0.0 {
            ((ap[0] * e[0] + ap[1] * e[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let diff = [ap[0] - t * e[0], ap[1] - t * e[1]];
        let d2 = diff[0] * diff[0] + diff[1] * diff[1];
        if d2 < best.signed_d2 {
            best = EdgeHit {
                signed_d2: d2,
                edge: k,
                t,
                diff,
                inside: false,
            };
        }
    }
    let area2 = cross2(
        [tri[1][0] - tri[0][0], tri[1][1] - tri[0][1]],
        [tri[2][0] - tri[0][0], tri[2][1] - tri[0][1]],
    );
    let inside = area2 != 0.0
        && ((signs[0] >= 0.0 && signs[1] >= 0.0 && signs[2] >= 0.0)
            || (signs[0] <= 0.0 && signs[1] <= 0.0 && signs[2] <= 0.0));
    best.inside = inside;
    if !inside {
        best.signed_d2 = -best.signed_d2;
    }
    best
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn pixel_center(size: usize, row: usize, col: usize) -> [f64; 2] {
    let s = size as f64;
    [(2 * col + 1) as f64 / s - 1.0, 1.0 - (2 * row + 1) as f64 / s]
}

impl Renderer {
    pub fn new(settings: RenderSettings) -> Self {
        Renderer { settings }
    }

    /// Renders `mesh` with the default grey material.
    pub fn forward(&self, mesh: &Mesh, view: &ViewSpec) -> Render {
        self.forward_colored(mesh, view, None)
    }

    /// Renders `mesh`, optionally with one albedo per face.
    pub fn forward_colored(
        &self,
        mesh: &Mesh,
        view: &ViewSpec,
        face_albedo: Option<&[Vec3]>,
    ) -> Render {
        let st = &self.settings;
        let size = view.image_size;
        let npix = size * size;
        let camera = Camera::new(view);
        let light = vec3::normalize(st.light_dir);
        let cam_verts: Vec<Vec3> = mesh.vertices.iter().map(|&v| camera.to_camera(v)).collect();

        let geom: Vec<FaceGeom> = mesh
            .faces
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                let cam = f.map(|i| cam_verts[i as usize]);
                if cam.iter().any(|c| c[2] < st.near) {
                    return FaceGeom::default();
                }
                let screen = cam.map(|c| {
                    [
                        c[0] / (c[2] * camera.tan_half),
                        c[1] / (c[2] * camera.tan_half),
                    ]
                });
                let zc = (cam[0][2] + cam[1][2] + cam[2][2]) / 3.0;
                let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
                let (normal, _) = vec3::face_normal(a, b, c);
                let world = [a, b, c];
                let ndotl = vec3::dot(normal, light);
                let albedo = face_albedo.map_or([st.albedo; 3], |cols| cols[fi]);
                FaceGeom {
                    valid: true,
                    screen,
                    cam,
                    world,
                    zdepth: (st.far - zc) / (st.far - st.near),
                    ndotl,
                    shade: st.ambient + st.directional * ndotl.max(0.0),
                    albedo,
                }
            })
            .collect();

        let reach = (st.cutoff * st.smoothing).sqrt();
        let s = size as f64;
        let mut per_pixel: Vec<Vec<(u32, f64)>> = vec![Vec::new(); npix];
        for (fi, g) in geom.iter().enumerate() {
            if !g.valid {
                continue;
            }
            let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for p in &g.screen {
                xmin = xmin.min(p[0]);
                xmax = xmax.max(p[0]);
                ymin = ymin.min(p[1]);
                ymax = ymax.max(p[1]);
            }
            let col_lo = (((xmin - reach) + 1.0) * s / 2.0 - 0.5).ceil().max(0.0);
            let col_hi = (((xmax + reach) + 1.0) * s / 2.0 - 0.5).floor().min(s - 1.0);
            let row_lo = (((1.0 - (ymax + reach)) * s - 1.0) / 2.0).ceil().max(0.0);
            let row_hi = (((1.0 - (ymin - reach)) * s - 1.0) / 2.0).floor().min(s - 1.0);
            if col_lo > col_hi || row_lo > row_hi {
                continue;
            }
            for row in row_lo as usize..=row_hi as usize {
                for col in col_lo as usize..=col_hi as usize {
                    let hit = edge_hit(pixel_center(size, row, col), &g.screen);
                    let logit = hit.signed_d2 / st.smoothing;
                    if logit < -st.cutoff {
                        continue;
                    }
                    per_pixel[row * size + col].push((fi as u32, sigmoid(logit)));
                }
            }
        }

        let mut offsets = Vec::with_capacity(npix + 1);
        let mut contribs = Vec::new();
        let mut pixels = vec![PixelAgg::default(); npix];
        let mut rgba = vec![0.0; 4 * npix];
        offsets.push(0u32);
        for (p, list) in per_pixel.into_iter().enumerate() {
            if !list.is_empty() {
                let zmax = list
                    .iter()
                    .map(|&(f, _)| geom[f as usize].zdepth)
                    .fold(f64::MIN, f64::max);
                let mut keep = 1.0;
                let mut wsum = 0.0;
                let mut blend = [0.0; 3];
                for &(f, d) in &list {
                    let g = &geom[f as usize];
                    keep *= 1.0 - d;
                    let w = d * ((g.zdepth - zmax) / st.depth_gamma).exp();
                    wsum += w;
                    for c in 0..3 {
                        blend[c] += w * g.albedo[c] * g.shade;
                    }
                }
                let blend = blend.map(|b| b / wsum);
                let alpha = 1.0 - keep;
                pixels[p] = PixelAgg {
                    alpha,
                    blend,
                    weight_sum: wsum,
                    zmax,
                };
                for c in 0..3 {
                    rgba[c * npix + p] = alpha * blend[c];
                }
                rgba[3 * npix + p] = alpha;
            }
            contribs.extend(list);
            offsets.push(contribs.len() as u32);
        }

        Render {
            size,
            rgba,
            camera,
            faces: mesh.faces.clone(),
            geom,
            offsets,
            contribs,
            pixels,
        }
    }

    /// Gradient of `sum(grad_rgba * rgba)` with respect to the world-space
    /// vertices of the mesh passed to the forward call.
    pub fn backward(&self, render: &Render, num_vertices: usize, grad_rgba: &[f64]) -> Vec<Vec3> {
        let st = &self.settings;
        let size = render.size;
        let npix = size * size;
        assert_eq!(grad_rgba.len(), 4 * npix, "gradient must match the rendered image");
        let nf = render.geom.len();
        let mut g_screen = vec![[[0.0f64; 2]; 3]; nf];
        let mut g_zdepth = vec![0.0f64; nf];
        let mut g_shade = vec![0.0f64; nf];
        let mut excl: Vec<f64> = Vec::new();

        for p in 0..npix {
            let range = render.offsets[p] as usize..render.offsets[p + 1] as usize;
            if range.is_empty() {
                continue;
            }
            let list = &render.contribs[range];
            let agg = render.pixels[p];
            let g_rgb = [grad_rgba[p], grad_rgba[npix + p], grad_rgba[2 * npix + p]];
            let g_alpha = grad_rgba[3 * npix + p]
                + g_rgb[0] * agg.blend[0]
                + g_rgb[1] * agg.blend[1]
                + g_rgb[2] * agg.blend[2];
            if g_alpha == 0.0 && g_rgb == [0.0; 3] {
                continue;
            }
            // Products of (1 - D_j) over all j != k.
            excl.clear();
            excl.resize(list.len(), 1.0);
            let mut prefix = 1.0;
            for (k, &(_, d)) in list.iter().enumerate() {
                excl[k] = prefix;
                prefix *= 1.0 - d;
            }
            let mut suffix = 1.0;
            for (k, &(_, d)) in list.iter().enumerate().rev() {
                excl[k] *= suffix;
                suffix *= 1.0 - d;
            }
            let center = pixel_center(size, p / size, p % size);
            for (k, &(f, d)) in list.iter().enumerate() {
                let fi = f as usize;
                let g = &render.geom[fi];
                let e = ((g.zdepth - agg.zmax) / st.depth_gamma).exp();
                let w = d * e;
                let mut s = 0.0;
                let mut shade_coef = 0.0;
                for c in 0..3 {
                    s += g_rgb[c] * (g.albedo[c] * g.shade - agg.blend[c]);
                    shade_coef += g_rgb[c] * g.albedo[c];
                }
                let scale = agg.alpha / agg.weight_sum;
                let g_d = g_alpha * excl[k] + scale * s * e;
                g_zdepth[fi] += scale * s * w / st.depth_gamma;
                g_shade[fi] += scale * w * shade_coef;

                let hit = edge_hit(center, &g.screen);
                let sign = if hit.inside { 1.0 } else { -1.0 };
                let g_d2 = g_d * d * (1.0 - d) * sign / st.smoothing;
                // d(d^2)/d(a) = -2 (1 - t) diff, d(d^2)/d(b) = -2 t diff
                let (ia, ib) = (hit.edge, (hit.edge + 1) % 3);
                for c in 0..2 {
                    g_screen[fi][ia][c] += g_d2 * -2.0 * (1.0 - hit.t) * hit.diff[c];
                    g_screen[fi][ib][c] += g_d2 * -2.0 * hit.t * hit.diff[c];
                }
            }
        }

        let light = vec3::normalize(st.light_dir);
        let mut grad = vec![[0.0; 3]; num_vertices];
        for (fi, g) in render.geom.iter().enumerate() {
            if !g.valid {
                continue;
            }
            let face = render.faces[fi];
            let tan = render.camera.tan_half;
            let dz_common = -g_zdepth[fi] / (3.0 * (st.far - st.near));
            for k in 0..3 {
                let c = g.cam[k];
                let (gx, gy) = (g_screen[fi][k][0], g_screen[fi][k][1]);
                let inv = 1.0 / (c[2] * tan);
                let g_cam = [
                    gx * inv,
                    gy * inv,
                    -(gx * g.screen[k][0] + gy * g.screen[k][1]) / c[2] + dz_common,
                ];
                vec3::add_assign(&mut grad[face[k] as usize], render.camera.grad_to_world(g_cam));
            }
            if g.ndotl > 0.0 && g_shade[fi] != 0.0 {
                let g_n = vec3::scale(light, g_shade[fi] * st.directional);
                let [a, b, c] = g.world;
                let gv = vec3::face_normal_backward(a, b, c, g_n);
                for k in 0..3 {
                    vec3::add_assign(&mut grad[face[k] as usize], gv[k]);
                }
            }
        }
        grad
    }

    pub fn render_image(&self, mesh: &Mesh, view: &ViewSpec) -> ImageRGBA {
        self.forward(mesh, view).to_image()
    }
}

/// Renders `mesh` with default settings and the given smoothing.
pub fn render(mesh: &Mesh, view: &ViewSpec, smoothing: f64) -> ImageRGBA {
    Renderer::new(RenderSettings::with_smoothing(smoothing)).render_image(mesh, view)
}

/// Alpha channel of [`render`] at the default smoothing.
pub fn render_silhouette(mesh: &Mesh, view: &ViewSpec) -> GrayMap {
    render(mesh, view, DEFAULT_SMOOTHING).alpha_map()
}
