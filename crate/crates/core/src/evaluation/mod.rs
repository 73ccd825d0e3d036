//! 3D IoU scoring of reconstructions against ground-truth meshes, and
//! experiment reports.

mod plot;
mod voxel;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use plot::write_line_plot_svg;
pub use voxel::{is_watertight, iou3d, silhouette_iou, voxelize, voxelize_at, Bounds, VoxelGrid, VOXEL_RESOLUTION};

use crate::data::{perturb_brightness, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{make_sphere_template, Mesh};
use crate::img::ImageRGBA;
use crate::networks::ReconNet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub bounds: Bounds,
    /// Brightness perturbation applied to the test images.
    pub brightness_sigma: f64,
    pub seed: u64,
    /// Evaluate every `view_stride`-th view of each object.
    pub view_stride: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            bounds: Bounds::default(),
            brightness_sigma: 0.0,
            seed: 0,
            view_stride: 1,
        }
    }
}

/// One scored test image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub object_id: String,
    pub class: String,
    pub view: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_iou: f64,
    pub per_class: BTreeMap<String, f64>,
    pub evaluated: usize,
    /// Objects without a ground-truth mesh.
    pub skipped: usize,
    /// Predictions or ground truths that are not closed meshes.
    pub non_watertight: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted by object id, then view.
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn summarize(mut rows: Vec<EvalRow>, skipped: usize, non_watertight: usize) -> EvalReport {
    rows.sort_by(|a, b| (&a.object_id, a.view).cmp(&(&b.object_id, b.view)));
    let mut by_class: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        by_class.entry(r.class.clone()).or_default().push(r.iou);
    }
    let summary = EvalSummary {
        mean_iou: mean(rows.iter().map(|r| r.iou)),
        per_class: by_class.into_iter().map(|(c, v)| (c, mean(v))).collect(),
        evaluated: rows.len(),
        skipped,
        non_watertight,
    };
    EvalReport { rows, summary }
}

/// Scores the meshes produced by `predict` for every selected view of every
/// object that has a ground-truth mesh.
pub fn evaluate_with<F>(dataset: &Dataset, options: &EvalOptions, mut predict: F) -> Result<EvalReport>
where
    F: FnMut(&[ImageRGBA]) -> Result<Vec<Mesh>>,
{
    if options.view_stride == 0 {
        return Err(Error::Config("view stride must be positive".into()));
    }
    let mut rows = Vec::new();
    let (mut skipped, mut non_watertight) = (0, 0);
    for (oi, obj) in dataset.objects.iter().enumerate() {
        let Some(gt) = &obj.mesh else {
            skipped += 1;
            continue;
        };
        let gt_grid = voxelize(gt, options.bounds);
        non_watertight += usize::from(gt_grid.non_watertight);
        // one stream per object keeps scores independent of dataset order
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ (oi as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let indices: Vec<usize> = (0..obj.views.len()).step_by(options.view_stride).collect();
        let images = indices
            .iter()
            .map(|&k| {
                let v = &obj.views[k];
                let rgb = perturb_brightness(&v.image, &v.silhouette, options.brightness_sigma, &mut rng)?;
                Ok(ImageRGBA::from_rgb(&rgb))
            })
            .collect::<Result<Vec<_>>>()?;
        let meshes = predict(&images)?;
        if meshes.len() != images.len() {
            return Err(Error::shape(format!("{} meshes", images.len()), meshes.len()));
        }
        for (&k, mesh) in indices.iter().zip(&meshes) {
            let grid = voxelize(mesh, options.bounds);
            non_watertight += usize::from(grid.non_watertight);
            rows.push(EvalRow {
                object_id: obj.object_id.clone(),
                class: obj.class.clone(),
                view: k,
                iou: iou3d(&grid, &gt_grid)?,
            });
        }
    }
    Ok(summarize(rows, skipped, non_watertight))
}

/// Scores a reconstruction network (eval mode) on `dataset`.
pub fn evaluate_model(recon: &mut ReconNet, dataset: &Dataset, options: &EvalOptions) -> Result<EvalReport> {
    let template = make_sphere_template();
    evaluate_with(dataset, options, |images| recon.reconstruct(images, &template))
}

/// Score of a model that always predicts the undeformed template sphere.
pub fn sphere_baseline(dataset: &Dataset, options: &EvalOptions) -> Result<EvalReport> {
    let template = make_sphere_template();
    evaluate_with(dataset, options, |images| Ok(vec![template.clone(); images.len()]))
}

/// Per-run summaries and their average, for repeated training runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedSummary {
    pub runs: Vec<EvalSummary>,
    pub mean_iou: f64,
    pub per_class: BTreeMap<String, f64>,
}

pub fn average_summaries(runs: &[EvalSummary]) -> Result<AveragedSummary> {
    if runs.is_empty() {
        return Err(Error::Config("nothing to average".into()));
    }
    let classes: Vec<&String> = runs[0].per_class.keys().collect();
    if runs.iter().any(|r| r.per_class.keys().collect::<Vec<_>>() != classes) {
        return Err(Error::Dataset("runs were evaluated on different class sets".into()));
    }
    Ok(AveragedSummary {
        runs: runs.to_vec(),
        mean_iou: mean(runs.iter().map(|r| r.mean_iou)),
        per_class: classes
            .into_iter()
            .map(|c| (c.clone(), mean(runs.iter().map(|r| r.per_class[c]))))
            .collect(),
    })
}

/// Mean IoU at each brightness sigma.
pub fn brightness_sweep(
    recon: &mut ReconNet,
    dataset: &Dataset,
    sigmas: &[f64],
    options: &EvalOptions,
) -> Result<Vec<(f64, EvalSummary)>> {
    sigmas
        .iter()
        .map(|&s| {
            let opts = EvalOptions {
                brightness_sigma: s,
                ..*options
            };
            Ok((s, evaluate_model(recon, dataset, &opts)?.summary))
        })
        .collect()
}

pub fn write_rows_csv(rows: &[EvalRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `iou.csv` and `summary.json` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rows_csv(&report.rows, &dir.join("iou.csv"))?;
    write_json(&report.summary, &dir.join("summary.json"))
}
