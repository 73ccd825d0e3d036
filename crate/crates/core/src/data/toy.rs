use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{composite, dataset_views, BackgroundLibrary, BackgroundMode, Dataset, ObjectRecord, Split, ViewRecord};
use crate::error::{Error, Result};
use crate::geometry::primitives::{self, Shape};
use crate::geometry::Mesh;
use crate::renderer::{RenderSettings, Renderer};

/// Recipe for a synthetic dataset of primitive shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    /// Number of objects per shape, in order.
    pub counts: Vec<(Shape, usize)>,
    pub image_size: usize,
    pub background: BackgroundMode,
    /// Draw a fresh scene for every view instead of one per object.
    pub per_view_backgrounds: bool,
    /// Characteristic half-size range of the objects.
    pub size_range: (f64, f64),
    /// Fraction of objects (rounded up) assigned to the test split.
    pub test_fraction: f64,
    /// Renderer smoothing for the ground-truth images.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            counts: vec![(Shape::Cube, 10), (Shape::Sphere, 10), (Shape::Pyramid, 10)],
            image_size: 64,
            background: BackgroundMode::Noise,
            per_view_backgrounds: false,
            size_range: (0.35, 0.55),
            test_fraction: 0.0,
            smoothing: 1e-5,
            seed: 0,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.counts.iter().map(|(_, n)| n).sum::<usize>() == 0 {
            return Err(Error::Config("toy dataset needs at least one object".into()));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!("image size must be at least 16, got {}", self.image_size)));
        }
        let (lo, hi) = self.size_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("size range must satisfy 0 < lo <= hi < 1, got {lo}..{hi}")));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test fraction must be in [0, 1), got {}", self.test_fraction)));
        }
        if !(self.smoothing > 0.0) {
            return Err(Error::Config("smoothing must be positive".into()));
        }
        Ok(())
    }
}

/// Ground-truth mesh of one toy object with characteristic half-size `s`.
pub(crate) fn toy_mesh(shape: Shape, s: f64) -> Mesh {
    match shape {
        Shape::Cube => primitives::cube(s),
        Shape::Sphere => primitives::sphere(s),
        Shape::Pyramid => primitives::pyramid(s, 2.0 * s),
        Shape::Torus => primitives::torus(s, 0.35 * s, 24, 12),
    }
}

/// Renders every view of every object and composites it over its
/// background scene.
pub fn make_toy_dataset(spec: &ToySpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let library = BackgroundLibrary::new(spec.background.clone(), spec.image_size)?;
    let renderer = Renderer::new(RenderSettings::with_smoothing(spec.smoothing));
    let views = dataset_views(spec.image_size);
    let n_total: usize = spec.counts.iter().map(|(_, n)| n).sum();
    let n_test = (spec.test_fraction * n_total as f64).ceil() as usize;
    // test objects are a seeded random subset
    let mut order: Vec<usize> = (0..n_total).collect();
    for i in (1..n_total).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let test: std::collections::HashSet<usize> = order[..n_test].iter().copied().collect();

    let mut objects = Vec::with_capacity(n_total);
    for (shape, count) in &spec.counts {
        for _ in 0..*count {
            let idx = objects.len();
            let s = rng.random_range(spec.size_range.0..=spec.size_range.1);
            let mesh = toy_mesh(*shape, s);
            let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.35..0.95));
            let albedo: Vec<[f64; 3]> = mesh
                .faces
                .iter()
                .map(|_| {
                    let j = rng.random_range(0.9..1.1);
                    base.map(|c| (c * j).min(1.0))
                })
                .collect();
            let scene = library.scene(&mut rng);
            let records = views
                .iter()
                .enumerate()
                .map(|(k, view)| {
                    let out = renderer.forward_colored(&mesh, view, Some(&albedo));
                    let img = out.to_image();
                    let sil = img.alpha_map();
                    // the renderer premultiplies by alpha; undo that for compositing
                    let mut object = img.rgb();
                    let npix = spec.image_size * spec.image_size;
                    for (i, v) in object.data.iter_mut().enumerate() {
                        let a = sil.data[i % npix];
                        *v = if a > 1e-6 { (*v / a).min(1.0) } else { 0.0 };
                    }
                    let bg = if spec.per_view_backgrounds {
                        library.scene(&mut rng).view(k, view.azimuth, spec.image_size)
                    } else {
                        scene.view(k, view.azimuth, spec.image_size)
                    };
                    Ok(ViewRecord {
                        image: composite(&object, &sil, &bg)?,
                        silhouette: sil,
                        view: *view,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            objects.push(ObjectRecord {
                object_id: format!("{}_{idx:04}", shape.name()),
                class: shape.name().to_string(),
                split: if test.contains(&idx) { Split::Test } else { Split::Train },
                views: records,
                mesh: Some(mesh),
            });
        }
    }
    Ok(Dataset {
        image_size: spec.image_size,
        objects,
    })
}
