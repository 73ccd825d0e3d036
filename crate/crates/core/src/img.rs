//! Planar (channel-major) image buffers shared by the renderer, the networks
//! and the dataset code.

use std::path::Path;

use crate::error::{Error, Result};

/// `H x W x 4` image with channels stored as planes: RGB then alpha.
///
/// The renderer and the image-to-rendering translator both produce this
/// type; alpha is the (soft) silhouette.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGBA {
    pub size: usize,
    pub data: Vec<f32>,
}

/// `H x W x 3` planar RGB image. Values are nominally in `[0, 1]`, but
/// brightness perturbation may push them outside that range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    pub size: usize,
    pub data: Vec<f32>,
}

/// Single-channel map, e.g. a silhouette in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMap {
    pub size: usize,
    pub data: Vec<f32>,
}

macro_rules! planar_common {
    ($ty:ident, $channels:expr) => {
        impl $ty {
            pub const CHANNELS: usize = $channels;

            pub fn zeros(size: usize) -> Self {
                $ty {
                    size,
                    data: vec![0.0; $channels * size * size],
                }
            }

            pub fn filled(size: usize, value: f32) -> Self {
                $ty {
                    size,
                    data: vec![value; $channels * size * size],
                }
            }

            pub fn from_vec(size: usize, data: Vec<f32>) -> Result<Self> {
                if data.len() != $channels * size * size {
                    return Err(Error::shape(
                        format!("{}x{}x{}", $channels, size, size),
                        format!("{} values", data.len()),
                    ));
                }
                Ok($ty { size, data })
            }

            pub fn channel(&self, c: usize) -> &[f32] {
                let n = self.size * self.size;
                &self.data[c * n..(c + 1) * n]
            }

            pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
                let n = self.size * self.size;
                &mut self.data[c * n..(c + 1) * n]
            }

            pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
                self.data[(c * self.size + row) * self.size + col]
            }
        }
    };
}

planar_common!(ImageRGBA, 4);
planar_common!(ImageRGB, 3);
planar_common!(GrayMap, 1);

impl ImageRGBA {
    /// Pads an RGB image with a constant-one fourth channel.
    pub fn from_rgb(rgb: &ImageRGB) -> Self {
        let n = rgb.size * rgb.size;
        let mut data = Vec::with_capacity(4 * n);
        data.extend_from_slice(&rgb.data);
        data.extend(std::iter::repeat_n(1.0, n));
        ImageRGBA {
            size: rgb.size,
            data,
        }
    }

    pub fn alpha(&self) -> &[f32] {
        self.channel(3)
    }

    pub fn alpha_map(&self) -> GrayMap {
        GrayMap {
            size: self.size,
            data: self.alpha().to_vec(),
        }
    }

    pub fn rgb(&self) -> ImageRGB {
        ImageRGB {
            size: self.size,
            data: self.data[..3 * self.size * self.size].to_vec(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_planar(path, self.size, &self.data, 4)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let (size, data) = load_planar(path, 4)?;
        Ok(ImageRGBA { size, data })
    }
}

impl ImageRGB {
    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_planar(path, self.size, &self.data, 3)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let (size, data) = load_planar(path, 3)?;
        Ok(ImageRGB { size, data })
    }
}

impl GrayMap {
    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_planar(path, self.size, &self.data, 1)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let (size, data) = load_planar(path, 1)?;
        Ok(GrayMap { size, data })
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save_planar(path: &Path, size: usize, data: &[f32], channels: usize) -> Result<()> {
    let n = size * size;
    let mut interleaved = Vec::with_capacity(n * channels);
    for p in 0..n {
        for c in 0..channels {
            interleaved.push(quantize(data[c * n + p]));
        }
    }
    let color = match channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        _ => image::ExtendedColorType::Rgba8,
    };
    image::save_buffer(path, &interleaved, size as u32, size as u32, color).map_err(|source| {
        Error::Image {
            path: path.to_owned(),
            source,
        }
    })
}

fn load_planar(path: &Path, channels: usize) -> Result<(usize, Vec<f32>)> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w != h {
        return Err(Error::Dataset(format!(
            "{}: expected a square image, got {w}x{h}",
            path.display()
        )));
    }
    let raw: Vec<u8> = match channels {
        1 => img.into_luma8().into_raw(),
        3 => img.into_rgb8().into_raw(),
        _ => img.into_rgba8().into_raw(),
    };
    let n = w * h;
    let mut data = vec![0f32; n * channels];
    for p in 0..n {
        for c in 0..channels {
            data[c * n + p] = f32::from(raw[p * channels + c]) / 255.0;
        }
    }
    Ok((w, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ImageRGB::zeros(16);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 256) as f32 / 255.0;
        }
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = ImageRGB::load_png(&path).unwrap();
        assert_eq!(back.size, 16);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rgba_padding_uses_ones() {
        let rgb = ImageRGB::filled(16, 0.25);
        let rgba = ImageRGBA::from_rgb(&rgb);
        assert!(rgba.alpha().iter().all(|&a| a == 1.0));
        assert_eq!(rgba.rgb(), rgb);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(ImageRGBA::from_vec(16, vec![0.0; 16 * 16 * 3]).is_err());
        assert!(GrayMap::from_vec(16, vec![0.0; 256]).is_ok());
    }
}
