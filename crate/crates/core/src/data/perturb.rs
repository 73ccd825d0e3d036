use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::{GrayMap, ImageRGB};
use crate::renderer::ViewSpec;

/// Perturbations applied when sampling training data.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbSpec {
    /// Standard deviation of the azimuth noise given to the renderer, degrees.
    pub azimuth_sigma: f64,
    /// Standard deviation of the whole-image brightness factors.
    pub brightness_sigma: f64,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.azimuth_sigma >= 0.0 && self.brightness_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "perturbation sigmas must be non-negative, got azimuth {} and brightness {}",
                self.azimuth_sigma, self.brightness_sigma
            )));
        }
        Ok(())
    }
}

fn check_sizes(img: &ImageRGB, sil: &GrayMap) -> Result<()> {
    if img.size != sil.size {
        return Err(Error::shape(
            format!("{0}x{0} silhouette", img.size),
            format!("{0}x{0}", sil.size),
        ));
    }
    Ok(())
}

/// `sil * object + (1 - sil) * background`, per pixel and channel.
pub fn composite(object: &ImageRGB, sil: &GrayMap, background: &ImageRGB) -> Result<ImageRGB> {
    check_sizes(object, sil)?;
    if background.size != object.size {
        return Err(Error::shape(
            format!("{0}x{0} background", object.size),
            format!("{0}x{0}", background.size),
        ));
    }
    let n = sil.data.len();
    let mut out = ImageRGB::zeros(object.size);
    for (i, v) in out.data.iter_mut().enumerate() {
        let s = sil.data[i % n];
        *v = s * object.data[i] + (1.0 - s) * background.data[i];
    }
    Ok(out)
}

/// `img * (1 + sil * n1) + |(1 - sil) * n2|` with `n1, n2 ~ N(0, sigma^2)`
/// drawn once for the whole image. Values are not clipped. With
/// `sigma == 0` the image is returned unchanged and no randomness is drawn.
pub fn perturb_brightness(img: &ImageRGB, sil: &GrayMap, sigma: f64, rng: &mut impl Rng) -> Result<ImageRGB> {
    check_sizes(img, sil)?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let n1 = normal.sample(rng) as f32;
    let n2 = normal.sample(rng) as f32;
    Ok(brighten(img, sil, n1, n2))
}

/// The brightness formula for fixed noise values.
pub fn brighten(img: &ImageRGB, sil: &GrayMap, n1: f32, n2: f32) -> ImageRGB {
    let n = sil.data.len();
    ImageRGB {
        size: img.size,
        data: img
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = sil.data[i % n];
                v * (1.0 + s * n1) + ((1.0 - s) * n2).abs()
            })
            .collect(),
    }
}

/// Adds `N(0, sigma^2)` degrees to the azimuth and wraps into `[0, 360)`.
pub fn perturb_azimuth(view: &ViewSpec, sigma: f64, rng: &mut impl Rng) -> ViewSpec {
    if sigma == 0.0 {
        return *view;
    }
    let noise = Normal::new(0.0, sigma).expect("finite sigma").sample(rng);
    let mut azimuth = (view.azimuth + noise).rem_euclid(360.0);
    if azimuth >= 360.0 {
        azimuth = 0.0;
    }
    ViewSpec { azimuth, ..*view }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gradient_image(size: usize) -> ImageRGB {
        let mut img = ImageRGB::zeros(size);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 97) as f32 / 96.0;
        }
        img
    }

    #[test]
    fn composite_examples() {
        let obj = ImageRGB::filled(16, 1.0);
        let bg = ImageRGB::filled(16, 0.0);
        assert_eq!(composite(&obj, &GrayMap::filled(16, 1.0), &bg).unwrap(), obj);
        assert_eq!(composite(&obj, &GrayMap::filled(16, 0.0), &bg).unwrap(), bg);
        let half = composite(&obj, &GrayMap::filled(16, 0.5), &bg).unwrap();
        assert!(half.data.iter().all(|&v| v == 0.5));
        assert!(composite(&obj, &GrayMap::filled(8, 0.5), &bg).is_err());
    }

    #[test]
    fn brightness_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = gradient_image(16);
        let sil = GrayMap::filled(16, 0.3);
        assert_eq!(perturb_brightness(&img, &sil, 0.0, &mut rng).unwrap(), img);
        // sil = 1 leaves only the multiplicative term
        let ones = GrayMap::filled(16, 1.0);
        let mut a = ChaCha8Rng::seed_from_u64(2);
        let out = perturb_brightness(&img, &ones, 0.7, &mut a).unwrap();
        let mut b = ChaCha8Rng::seed_from_u64(2);
        let n1 = Normal::new(0.0, 0.7).unwrap().sample(&mut b) as f32;
        for (o, v) in out.data.iter().zip(&img.data) {
            assert_eq!(*o, v * (1.0 + n1));
        }
        // sil = 0 only adds a non-negative offset
        let zeros = GrayMap::filled(16, 0.0);
        let out = perturb_brightness(&img, &zeros, 2.0, &mut rng).unwrap();
        let shift = out.data[0] - img.data[0];
        assert!(shift >= 0.0);
        for (o, v) in out.data.iter().zip(&img.data) {
            assert!(*o >= *v && ((o - v) - shift).abs() < 1e-6);
        }
    }

    #[test]
    fn brightness_is_never_clipped() {
        let img = ImageRGB::filled(16, 0.9);
        let sil = GrayMap::filled(16, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let above = (0..20).any(|_| {
            perturb_brightness(&img, &sil, 4.0, &mut rng)
                .unwrap()
                .data
                .iter()
                .any(|&v| v > 1.0)
        });
        assert!(above);
    }

    #[test]
    fn azimuth_noise_statistics() {
        let view = ViewSpec::new(15.0, 30.0, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(perturb_azimuth(&view, 0.0, &mut rng), view);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| {
                let v = perturb_azimuth(&view, 5.0, &mut rng);
                assert!((0.0..360.0).contains(&v.azimuth));
                assert_eq!((v.elevation, v.distance, v.image_size), (30.0, view.distance, 32));
                (v.azimuth - 15.0 + 180.0).rem_euclid(360.0) - 180.0
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
        assert!((std - 5.0).abs() < 0.25, "{std}");
        // wrapping near zero
        let zero = ViewSpec::new(0.0, 30.0, 32);
        for _ in 0..1000 {
            let v = perturb_azimuth(&zero, 5.0, &mut rng);
            assert!((0.0..360.0).contains(&v.azimuth));
        }
    }
}
