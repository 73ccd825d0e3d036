//! On-disk dataset layout.
//!
//! ```text
//! root/
//!   manifest.json
//!   <object_id>/
//!     meta.json        object id, class, split and every view's camera
//!     view_00.png ...  composited RGB views
//!     sil_00.png ...   silhouettes
//!     mesh.obj         optional ground truth
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, ObjectRecord, Split, ViewRecord};
use crate::error::{Error, Result};
use crate::geometry::obj::{read_obj, write_obj};
use crate::img::{GrayMap, ImageRGB};
use crate::renderer::ViewSpec;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dir: String,
    pub class: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub image_size: usize,
    pub objects: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectMeta {
    object_id: String,
    class: String,
    split: Split,
    views: Vec<ViewSpec>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(dataset.objects.len());
    for obj in &dataset.objects {
        let dir = root.join(&obj.object_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (k, v) in obj.views.iter().enumerate() {
            v.image.save_png(&dir.join(format!("view_{k:02}.png")))?;
            v.silhouette.save_png(&dir.join(format!("sil_{k:02}.png")))?;
        }
        if let Some(mesh) = &obj.mesh {
            write_obj(mesh, &dir.join("mesh.obj"))?;
        }
        let meta = ObjectMeta {
            object_id: obj.object_id.clone(),
            class: obj.class.clone(),
            split: obj.split,
            views: obj.views.iter().map(|v| v.view).collect(),
        };
        write_json(&dir.join("meta.json"), &meta)?;
        entries.push(ManifestEntry {
            dir: obj.object_id.clone(),
            class: obj.class.clone(),
            split: obj.split,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        image_size: dataset.image_size,
        objects: entries,
    };
    write_json(&root.join(MANIFEST_FILE), &manifest)
}

/// Loads a dataset written by [`write_dataset`]. Objects with fewer than two
/// views are skipped with a warning.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let manifest: Manifest = read_json(&root.join(MANIFEST_FILE))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported dataset format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let size = manifest.image_size;
    let mut objects = Vec::with_capacity(manifest.objects.len());
    for entry in &manifest.objects {
        let dir = root.join(&entry.dir);
        let meta: ObjectMeta = read_json(&dir.join("meta.json"))?;
        if meta.views.len() < 2 {
            log::warn!("skipping {}: only {} view(s)", meta.object_id, meta.views.len());
            continue;
        }
        let views = meta
            .views
            .iter()
            .enumerate()
            .map(|(k, view)| {
                let image = ImageRGB::load_png(&dir.join(format!("view_{k:02}.png")))?;
                let silhouette = GrayMap::load_png(&dir.join(format!("sil_{k:02}.png")))?;
                if image.size != size || silhouette.size != size || view.image_size != size {
                    return Err(Error::Dataset(format!(
                        "{}: view {k} does not match the {size}x{size} image size",
                        meta.object_id
                    )));
                }
                Ok(ViewRecord {
                    image,
                    silhouette,
                    view: *view,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mesh_path = dir.join("mesh.obj");
        let mesh = if mesh_path.exists() { Some(read_obj(&mesh_path)?) } else { None };
        objects.push(ObjectRecord {
            object_id: meta.object_id,
            class: meta.class,
            split: meta.split,
            views,
            mesh,
        });
    }
    Ok(Dataset {
        image_size: size,
        objects,
    })
}
