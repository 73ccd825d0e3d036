//! Multi-view object datasets: synthesis, storage, and the training-facing
//! sampler.
//!
//! Every object is seen from [`NUM_VIEWS`] azimuths at a fixed elevation.
//! Stored views carry silhouettes for synthesis and evaluation, but the
//! training interface ([`TrainingSet`]) only ever hands out composited images
//! and camera poses.

mod background;
mod io;
mod perturb;
mod toy;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use background::{BackgroundLibrary, BackgroundMode, BackgroundScene};
pub use io::{load_dataset, write_dataset, Manifest, ManifestEntry, MANIFEST_FILE};
pub use perturb::{brighten, composite, perturb_azimuth, perturb_brightness, PerturbSpec};
pub use toy::{make_toy_dataset, ToySpec};

use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::img::{GrayMap, ImageRGB, ImageRGBA};
use crate::renderer::{ViewSpec, DEFAULT_ELEVATION};

pub const NUM_VIEWS: usize = 24;
/// Azimuth spacing between consecutive dataset views, degrees.
pub const VIEW_STEP: f64 = 15.0;

/// The camera poses of every dataset view.
pub fn dataset_views(image_size: usize) -> Vec<ViewSpec> {
    (0..NUM_VIEWS)
        .map(|k| ViewSpec::new(k as f64 * VIEW_STEP, DEFAULT_ELEVATION, image_size))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    /// Object composited over its background.
    pub image: ImageRGB,
    pub silhouette: GrayMap,
    pub view: ViewSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub object_id: String,
    pub class: String,
    pub split: Split,
    pub views: Vec<ViewRecord>,
    /// Ground truth, used for evaluation only.
    pub mesh: Option<Mesh>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub image_size: usize,
    pub objects: Vec<ObjectRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Dataset {
        Dataset {
            image_size: self.image_size,
            objects: self.objects.iter().filter(|o| o.split == split).cloned().collect(),
        }
    }
}

/// One training image with its (possibly perturbed) camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub image: ImageRGBA,
    pub view: ViewSpec,
    pub object: usize,
    pub view_index: usize,
}

/// Training-facing view of a dataset.
///
/// Only composited images and camera poses leave this type. Silhouettes are
/// used internally by the brightness perturbation, which needs to tell
/// object pixels from background pixels, and are never returned.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    dataset: Dataset,
    perturb: PerturbSpec,
}

impl TrainingSet {
    /// Objects with fewer than two views are dropped.
    pub fn new(dataset: Dataset, perturb: PerturbSpec) -> Result<Self> {
        perturb.validate()?;
        let image_size = dataset.image_size;
        let objects: Vec<ObjectRecord> = dataset.objects.into_iter().filter(|o| o.views.len() >= 2).collect();
        if objects.is_empty() {
            return Err(Error::Dataset("no object with at least two views".into()));
        }
        Ok(TrainingSet {
            dataset: Dataset { image_size, objects },
            perturb,
        })
    }

    pub fn len(&self) -> usize {
        self.dataset.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.objects.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.dataset.image_size
    }

    pub fn num_views(&self, object: usize) -> usize {
        self.dataset.objects[object].views.len()
    }

    pub fn perturb(&self) -> &PerturbSpec {
        &self.perturb
    }

    /// Whether a sampled image depends on anything besides `(object, view)`.
    pub fn images_are_perturbed(&self) -> bool {
        self.perturb.brightness_sigma > 0.0
    }

    /// Unperturbed image and pose of one stored view.
    pub fn view(&self, object: usize, view_index: usize) -> (ImageRGBA, ViewSpec) {
        let v = &self.dataset.objects[object].views[view_index];
        (ImageRGBA::from_rgb(&v.image), v.view)
    }

    fn sample_view(&self, object: usize, view_index: usize, perturb_rng: &mut impl Rng) -> TrainingSample {
        let v = &self.dataset.objects[object].views[view_index];
        let view = perturb_azimuth(&v.view, self.perturb.azimuth_sigma, perturb_rng);
        let rgb = perturb_brightness(&v.image, &v.silhouette, self.perturb.brightness_sigma, perturb_rng)
            .expect("stored views have matching sizes");
        TrainingSample {
            image: ImageRGBA::from_rgb(&rgb),
            view,
            object,
            view_index,
        }
    }

    /// `n` independent samples: uniform object, then uniform view.
    pub fn sample_batch(&self, n: usize, rng: &mut impl Rng, perturb_rng: &mut impl Rng) -> Vec<TrainingSample> {
        (0..n)
            .map(|_| {
                let object = rng.random_range(0..self.len());
                let view_index = rng.random_range(0..self.num_views(object));
                self.sample_view(object, view_index, perturb_rng)
            })
            .collect()
    }

    /// Two distinct views of one uniformly drawn object.
    pub fn sample_pair(&self, rng: &mut impl Rng, perturb_rng: &mut impl Rng) -> (TrainingSample, TrainingSample) {
        let object = rng.random_range(0..self.len());
        let n = self.num_views(object);
        let a = rng.random_range(0..n);
        let b = (a + rng.random_range(1..n)) % n;
        (
            self.sample_view(object, a, perturb_rng),
            self.sample_view(object, b, perturb_rng),
        )
    }
}

#[cfg(test)]
mod tests;
