//! Background scenes composited behind the object renders.
//!
//! A scene is either a panorama that wraps around the object, sampled with a
//! horizontal shift proportional to the view azimuth, or an explicit set of
//! per-view images. Either way, two views of one object see the same scene
//! from consistent directions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NUM_VIEWS;
use crate::error::{Error, Result};
use crate::img::ImageRGB;

/// Where backgrounds come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum BackgroundMode {
    /// One random flat color per scene.
    Uniform,
    /// Two-color checkerboard with a random cell size.
    Checker,
    /// Smooth multi-octave value noise.
    Noise,
    /// User-supplied scenes: every image file in the directory is a
    /// panorama, every subdirectory holds one image per view.
    Dir(PathBuf),
}

impl fmt::Display for BackgroundMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackgroundMode::Uniform => f.write_str("uniform"),
            BackgroundMode::Checker => f.write_str("checker"),
            BackgroundMode::Noise => f.write_str("noise"),
            BackgroundMode::Dir(p) => write!(f, "dir:{}", p.display()),
        }
    }
}

impl FromStr for BackgroundMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(BackgroundMode::Uniform),
            "checker" => Ok(BackgroundMode::Checker),
            "noise" => Ok(BackgroundMode::Noise),
            _ => match s.strip_prefix("dir:") {
                Some(path) if !path.is_empty() => Ok(BackgroundMode::Dir(PathBuf::from(path))),
                _ => Err(Error::Config(format!(
                    "unknown background mode '{s}' (expected uniform, checker, noise or dir:PATH)"
                ))),
            },
        }
    }
}

impl From<BackgroundMode> for String {
    fn from(m: BackgroundMode) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for BackgroundMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One background scene.
#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundScene {
    /// Planar RGB panorama, `height x width`, wrapping horizontally.
    Panorama { width: usize, height: usize, data: Vec<f32> },
    /// One image per dataset view.
    Views(Vec<ImageRGB>),
}

impl BackgroundScene {
    /// Background for dataset view `view_index` seen from `azimuth` degrees.
    pub fn view(&self, view_index: usize, azimuth: f64, size: usize) -> ImageRGB {
        match self {
            BackgroundScene::Views(views) => views[view_index % views.len()].clone(),
            BackgroundScene::Panorama { width, height, data } => {
                let shift = ((azimuth.rem_euclid(360.0) / 360.0) * *width as f64).round() as usize;
                let mut out = ImageRGB::zeros(size);
                for c in 0..3 {
                    for r in 0..size {
                        let pr = r * height / size;
                        for col in 0..size {
                            let pc = (col + shift) % width;
                            out.data[(c * size + r) * size + col] = data[(c * height + pr) * width + pc];
                        }
                    }
                }
                out
            }
        }
    }
}

/// Source of scenes for a dataset.
#[derive(Debug, Clone)]
pub struct BackgroundLibrary {
    mode: BackgroundMode,
    size: usize,
    loaded: Vec<BackgroundScene>,
}

impl BackgroundLibrary {
    pub fn new(mode: BackgroundMode, size: usize) -> Result<Self> {
        let loaded = match &mode {
            BackgroundMode::Dir(dir) => load_dir(dir, size)?,
            _ => Vec::new(),
        };
        Ok(BackgroundLibrary { mode, size, loaded })
    }

    /// Draws one scene.
    pub fn scene(&self, rng: &mut impl Rng) -> BackgroundScene {
        let size = self.size;
        let width = 4 * size;
        match self.mode {
            BackgroundMode::Uniform => {
                let color: [f32; 3] = std::array::from_fn(|_| rng.random());
                panorama(width, size, |_, _| color)
            }
            BackgroundMode::Checker => {
                let a: [f32; 3] = std::array::from_fn(|_| rng.random());
                let b: [f32; 3] = std::array::from_fn(|_| rng.random());
                // cell sizes divide the panorama width so the pattern wraps
                let cell = size / [4, 8][rng.random_range(0..2)];
                panorama(width, size, |r, c| if (r / cell + c / cell) % 2 == 0 { a } else { b })
            }
            BackgroundMode::Noise => noise_panorama(width, size, rng),
            BackgroundMode::Dir(_) => self.loaded[rng.random_range(0..self.loaded.len())].clone(),
        }
    }
}

fn panorama(width: usize, height: usize, color: impl Fn(usize, usize) -> [f32; 3]) -> BackgroundScene {
    let mut data = vec![0.0; 3 * width * height];
    for r in 0..height {
        for c in 0..width {
            let rgb = color(r, c);
            for (ch, v) in rgb.iter().enumerate() {
                data[(ch * height + r) * width + c] = *v;
            }
        }
    }
    BackgroundScene::Panorama { width, height, data }
}

/// Sum of bilinearly interpolated random lattices at three scales, wrapping
/// horizontally, normalized to `[0, 1]` per channel.
fn noise_panorama(width: usize, height: usize, rng: &mut impl Rng) -> BackgroundScene {
    let mut acc = vec![[0.0f32; 3]; width * height];
    let mut amplitude = 1.0f32;
    for cell in [height / 2, height / 4, height / 8] {
        let cell = cell.max(2);
        let gx = width.div_ceil(cell);
        let gy = height.div_ceil(cell) + 1;
        let lattice: Vec<[f32; 3]> = (0..gx * gy).map(|_| std::array::from_fn(|_| rng.random())).collect();
        for r in 0..height {
            let fy = r as f32 / cell as f32;
            let (y0, ty) = (fy.floor() as usize, fy.fract());
            for c in 0..width {
                let fx = c as f32 / cell as f32;
                let (x0, tx) = (fx.floor() as usize, fx.fract());
                let at = |x: usize, y: usize| lattice[(y.min(gy - 1)) * gx + x % gx];
                for ch in 0..3 {
                    let top = at(x0, y0)[ch] * (1.0 - tx) + at(x0 + 1, y0)[ch] * tx;
                    let bottom = at(x0, y0 + 1)[ch] * (1.0 - tx) + at(x0 + 1, y0 + 1)[ch] * tx;
                    acc[r * width + c][ch] += amplitude * (top * (1.0 - ty) + bottom * ty);
                }
            }
        }
        amplitude *= 0.5;
    }
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for px in &acc {
        for ch in 0..3 {
            lo[ch] = lo[ch].min(px[ch]);
            hi[ch] = hi[ch].max(px[ch]);
        }
    }
    panorama(width, height, |r, c| {
        let px = acc[r * width + c];
        std::array::from_fn(|ch| (px[ch] - lo[ch]) / (hi[ch] - lo[ch]).max(1e-6))
    })
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp")
    )
}

fn load_rgb(path: &Path) -> Result<image::RgbImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?
        .into_rgb8())
}

fn to_planar(img: &image::RgbImage) -> (usize, usize, Vec<f32>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * w * h];
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            data[(ch * h + y as usize) * w + x as usize] = f32::from(px[ch]) / 255.0;
        }
    }
    (w, h, data)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    Ok(entries)
}

fn load_dir(dir: &Path, size: usize) -> Result<Vec<BackgroundScene>> {
    use image::imageops::{resize, FilterType};
    let mut scenes = Vec::new();
    for path in sorted_entries(dir)? {
        if path.is_dir() {
            let files: Vec<PathBuf> = sorted_entries(&path)?.into_iter().filter(|p| is_image(p)).collect();
            if files.len() != NUM_VIEWS {
                return Err(Error::Dataset(format!(
                    "background view set {} has {} images, expected {NUM_VIEWS}",
                    path.display(),
                    files.len()
                )));
            }
            let views = files
                .iter()
                .map(|f| {
                    let img = resize(&load_rgb(f)?, size as u32, size as u32, FilterType::Triangle);
                    let (_, _, data) = to_planar(&img);
                    Ok(ImageRGB { size, data })
                })
                .collect::<Result<_>>()?;
            scenes.push(BackgroundScene::Views(views));
        } else if is_image(&path) {
            let img = load_rgb(&path)?;
            let scale = size as f64 / img.height() as f64;
            let w = ((img.width() as f64 * scale).round() as u32).max(size as u32);
            let img = resize(&img, w, size as u32, FilterType::Triangle);
            let (width, height, data) = to_planar(&img);
            scenes.push(BackgroundScene::Panorama { width, height, data });
        }
    }
    if scenes.is_empty() {
        return Err(Error::Dataset(format!("no background scenes found in {}", dir.display())));
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mode_parsing() {
        assert_eq!("noise".parse::<BackgroundMode>().unwrap(), BackgroundMode::Noise);
        assert_eq!(
            "dir:/tmp/bg".parse::<BackgroundMode>().unwrap(),
            BackgroundMode::Dir("/tmp/bg".into())
        );
        assert!("minecraft".parse::<BackgroundMode>().is_err());
        assert!("dir:".parse::<BackgroundMode>().is_err());
        for m in [BackgroundMode::Uniform, BackgroundMode::Checker, BackgroundMode::Noise] {
            assert_eq!(m.to_string().parse::<BackgroundMode>().unwrap(), m);
        }
    }

    #[test]
    fn panorama_views_shift_with_azimuth() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lib = BackgroundLibrary::new(BackgroundMode::Noise, 32).unwrap();
        let scene = lib.scene(&mut rng);
        let a = scene.view(0, 0.0, 32);
        let b = scene.view(1, 90.0, 32);
        // a quarter turn shifts by one image width (the panorama is 4 wide)
        assert_ne!(a, b);
        assert_eq!(scene.view(0, 360.0, 32), a);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        // 45 degrees is half an image: the right half of view 0 becomes the left half
        let c = scene.view(3, 45.0, 32);
        for ch in 0..3 {
            for r in 0..32 {
                for col in 0..16 {
                    assert_eq!(c.get(ch, r, col), a.get(ch, r, col + 16));
                }
            }
        }
    }

    #[test]
    fn directory_scenes_load() {
        let dir = tempfile::tempdir().unwrap();
        let pano = image::RgbImage::from_fn(64, 16, |x, _| image::Rgb([x as u8 * 4, 0, 0]));
        pano.save(dir.path().join("a.png")).unwrap();
        let set = dir.path().join("set");
        std::fs::create_dir(&set).unwrap();
        for k in 0..NUM_VIEWS {
            image::RgbImage::from_pixel(8, 8, image::Rgb([0, k as u8 * 10, 0]))
                .save(set.join(format!("bg_{k:02}.png")))
                .unwrap();
        }
        let lib = BackgroundLibrary::new(BackgroundMode::Dir(dir.path().into()), 32).unwrap();
        assert_eq!(lib.loaded.len(), 2);
        match &lib.loaded[1] {
            BackgroundScene::Views(v) => {
                assert_eq!(v.len(), NUM_VIEWS);
                assert!((v[3].get(1, 5, 5) - 30.0 / 255.0).abs() < 1e-6);
            }
            other => panic!("expected a view set, got {other:?}"),
        }
        let empty = tempfile::tempdir().unwrap();
        assert!(BackgroundLibrary::new(BackgroundMode::Dir(empty.path().into()), 32).is_err());
    }
}
