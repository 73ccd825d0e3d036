//! The four learnable networks: the reconstruction network `R`, the two
//! translators between the input-image and rendering domains, and the
//! discriminator.
//!
//! All networks work on batches of square 4-channel images whose side is a
//! multiple of 32. Inputs in RGB are padded with a constant-one fourth
//! channel (see [`ImageRGBA::from_rgb`]).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{decode_mesh, Mesh, VertexOffsets, OFFSET_DIM};
use crate::img::ImageRGBA;
use crate::nn::{
    prefixed, Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Init, Layer, LayerCache, Linear, Mode, Module,
    Param, Sequential, Tensor,
};


/// Standard deviation of the normal init used by the translators and the
/// discriminator.
const GAN_INIT_STD: f32 = 0.02;

/// Scale applied to the last layer of `R` at initialization so the first
/// predictions stay close to the template sphere.
const RECON_HEAD_SCALE: f32 = 0.01;

/// Packs images into an `[n, 4, s, s]` tensor.
pub fn images_to_tensor(images: &[ImageRGBA], size: usize) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::shape("at least one image", "empty batch"));
    }
    for img in images {
        if img.size != size {
            return Err(Error::shape(
                format!("{size}x{size} images"),
                format!("{0}x{0}", img.size),
            ));
        }
    }
    let items: Vec<&[f32]> = images.iter().map(|i| i.data.as_slice()).collect();
    Tensor::stack(&items, [4, size, size])
}

pub fn tensor_to_images(t: &Tensor) -> Vec<ImageRGBA> {
    assert_eq!(t.c(), 4);
    assert_eq!(t.h(), t.w());
    (0..t.n())
        .map(|i| ImageRGBA {
            size: t.h(),
            data: t.item(i).to_vec(),
        })
        .collect()
}

fn check_input(x: &Tensor, size: usize) -> Result<()> {
    if x.shape[1..] != [4, size, size] {
        return Err(Error::shape(
            format!("[n, 4, {size}, {size}]"),
            format!("{:?}", x.shape),
        ));
    }
    Ok(())
}

fn check_size(size: usize) -> Result<()> {
    if size == 0 || size % 32 != 0 {
        return Err(Error::Config(format!(
            "network image size must be a positive multiple of 32, got {size}"
        )));
    }
    Ok(())
}

/// Which domain-adaptation network to create.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DaKind {
    I2r,
    R2i,
    D,
}

/// Reconstruction network: three 5x5 stride-2 convolutions (64, 128, 256
/// channels, batch norm, ReLU) followed by fully connected layers of width
/// 1024, 1024, 512, 1024, 2048 and the [`OFFSET_DIM`] outputs.
#[derive(Debug, Clone)]
pub struct ReconNet {
    pub size: usize,
    pub net: Sequential,
}

pub const RECON_CONV_CHANNELS: [usize; 3] = [64, 128, 256];
pub const RECON_FC_WIDTHS: [usize; 6] = [1024, 1024, 512, 1024, 2048, OFFSET_DIM];

impl ReconNet {
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        check_size(size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_c = 4;
        for &c in &RECON_CONV_CHANNELS {
            layers.push(Layer::Conv(Conv2d::new(in_c, c, 5, 2, 2, false, Init::FanInUniform, &mut rng)));
            layers.push(Layer::BatchNorm(BatchNorm2d::new(c)));
            layers.push(Layer::Act(Activation::Relu));
            in_c = c;
        }
        layers.push(Layer::Flatten);
        let mut in_f = in_c * (size / 8) * (size / 8);
        for (i, &w) in RECON_FC_WIDTHS.iter().enumerate() {
            let mut lin = Linear::new(in_f, w, Init::FanInUniform, &mut rng);
            let last = i + 1 == RECON_FC_WIDTHS.len();
            if last {
                lin.weight.value.iter_mut().for_each(|v| *v *= RECON_HEAD_SCALE);
                lin.bias.value.iter_mut().for_each(|v| *v = 0.0);
            }
            layers.push(Layer::Linear(lin));
            if !last {
                layers.push(Layer::Act(Activation::Relu));
            }
            in_f = w;
        }
        Ok(ReconNet {
            size,
            net: Sequential::new(layers),
        })
    }

    /// Raw offsets `[n, OFFSET_DIM, 1, 1]`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<LayerCache>)> {
        check_input(x, self.size)?;
        Ok(self.net.forward(x, mode))
    }

    pub fn backward(&mut self, caches: &[LayerCache], grad: &Tensor) {
        self.net.backward(caches, grad, true);
    }

    /// Eval-mode reconstruction of a batch of images.
    pub fn reconstruct(&mut self, images: &[ImageRGBA], template: &Mesh) -> Result<Vec<Mesh>> {
        let x = images_to_tensor(images, self.size)?;
        let (y, _) = self.forward(&x, Mode::Eval)?;
        (0..y.n())
            .map(|i| {
                let offsets = VertexOffsets::from_flat(y.item(i), template.vertices.len())?;
                decode_mesh(&offsets, template)
            })
            .collect()
    }
}

impl Module for ReconNet {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.net.params_mut()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f32>)> {
        self.net.buffers_mut()
    }
}

pub const TRANSLATOR_CHANNELS: [usize; 5] = [64, 128, 256, 512, 512];

/// U-Net translator. Five 4x4 stride-2 encoder blocks (batch norm, leaky
/// ReLU 0.2) mirrored by transposed-convolution decoder blocks (batch norm,
/// ReLU) that each receive the matching encoder activation as a skip input.
/// The output passes through `tanh` and is mapped affinely to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Translator {
    pub size: usize,
    pub encoder: Vec<Sequential>,
    pub decoder: Vec<Sequential>,
}

#[derive(Debug, Clone)]
pub struct TranslatorCache {
    encoder: Vec<Vec<LayerCache>>,
    decoder: Vec<Vec<LayerCache>>,
    /// Output of `tanh`, before the affine map.
    tanh: Tensor,
}

impl Translator {
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        check_size(size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = Init::Normal(GAN_INIT_STD);
        let ch = TRANSLATOR_CHANNELS;
        let mut encoder = Vec::new();
        let mut in_c = 4;
        for &c in &ch {
            encoder.push(Sequential::new(vec![
                Layer::Conv(Conv2d::new(in_c, c, 4, 2, 1, false, init, &mut rng)),
                Layer::BatchNorm(BatchNorm2d::with_random_scale(c, GAN_INIT_STD, &mut rng)),
                Layer::Act(Activation::LeakyRelu(0.2)),
            ]));
            in_c = c;
        }
        let mut decoder = Vec::new();
        // decoder block i maps to the resolution of encoder block 3 - i
        let mut in_c = ch[4];
        for i in 0..4 {
            let out_c = ch[3 - i];
            decoder.push(Sequential::new(vec![
                Layer::ConvT(ConvTranspose2d::new(in_c, out_c, 4, 2, 1, false, init, &mut rng)),
                Layer::BatchNorm(BatchNorm2d::with_random_scale(out_c, GAN_INIT_STD, &mut rng)),
                Layer::Act(Activation::Relu),
            ]));
            in_c = 2 * out_c;
        }
        decoder.push(Sequential::new(vec![
            Layer::ConvT(ConvTranspose2d::new(in_c, 4, 4, 2, 1, true, init, &mut rng)),
            Layer::Act(Activation::Tanh),
        ]));
        Ok(Translator { size, encoder, decoder })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, TranslatorCache)> {
        check_input(x, self.size)?;
        let mut skips = Vec::with_capacity(5);
        let mut enc_caches = Vec::with_capacity(5);
        let mut h = x.clone();
        for block in &mut self.encoder {
            let (y, c) = block.forward(&h, mode);
            enc_caches.push(c);
            skips.push(y.clone());
            h = y;
        }
        let mut dec_caches = Vec::with_capacity(5);
        for (i, block) in self.decoder.iter_mut().enumerate() {
            let input = if i == 0 {
                h
            } else {
                Tensor::cat_channels(&h, &skips[4 - i])
            };
            let (y, c) = block.forward(&input, mode);
            dec_caches.push(c);
            h = y;
        }
        let tanh = h;
        let out = Tensor {
            shape: tanh.shape,
            data: tanh.data.iter().map(|t| 0.5 * (t + 1.0)).collect(),
        };
        Ok((
            out,
            TranslatorCache {
                encoder: enc_caches,
                decoder: dec_caches,
                tanh,
            },
        ))
    }

    /// Backpropagates `grad` (with respect to the `[0, 1]` output) and
    /// returns the gradient with respect to the input. Parameter gradients
    /// are accumulated only when `param_grads` is set.
    pub fn backward(&mut self, cache: &TranslatorCache, grad: &Tensor, param_grads: bool) -> Tensor {
        let mut g = Tensor {
            shape: grad.shape,
            data: grad.data.iter().map(|d| 0.5 * d).collect(),
        };
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; 5];
        for i in (0..5).rev() {
            let dinput = self.decoder[i].backward(&cache.decoder[i], &g, param_grads);
            if i == 0 {
                g = dinput;
            } else {
                let c_main = dinput.c() - self.skip_channels(i);
                let (main, skip) = dinput.split_channels(c_main);
                skip_grads[4 - i] = Some(skip);
                g = main;
            }
        }
        for i in (0..5).rev() {
            if let Some(s) = skip_grads[i].take() {
                g.add_assign(&s);
            }
            g = self.encoder[i].backward(&cache.encoder[i], &g, param_grads);
        }
        debug_assert_eq!(cache.tanh.shape, grad.shape);
        g
    }

    fn skip_channels(&self, decoder_index: usize) -> usize {
        TRANSLATOR_CHANNELS[4 - decoder_index]
    }

    /// Eval-mode translation of a batch.
    pub fn translate(&mut self, images: &[ImageRGBA]) -> Result<Vec<ImageRGBA>> {
        let x = images_to_tensor(images, self.size)?;
        let (y, _) = self.forward(&x, Mode::Eval)?;
        Ok(tensor_to_images(&y))
    }
}

impl Module for Translator {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter_mut().enumerate() {
            out.extend(prefixed(&format!("enc{i}"), b.params_mut()));
        }
        for (i, b) in self.decoder.iter_mut().enumerate() {
            out.extend(prefixed(&format!("dec{i}"), b.params_mut()));
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f32>)> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter_mut().enumerate() {
            out.extend(prefixed(&format!("enc{i}"), b.buffers_mut()));
        }
        for (i, b) in self.decoder.iter_mut().enumerate() {
            out.extend(prefixed(&format!("dec{i}"), b.buffers_mut()));
        }
        out
    }
}

pub const DISCRIMINATOR_CHANNELS: [usize; 3] = [64, 128, 256];

/// Discriminator: three 4x4 stride-2 blocks (batch norm, leaky ReLU 0.2)
/// and a final one-channel 4x4 convolution with a sigmoid on every output
/// cell, so each cell judges one image patch.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub size: usize,
    pub net: Sequential,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorCache {
    layers: Vec<LayerCache>,
    map_shape: [usize; 4],
    probs: Vec<f32>,
}

impl Discriminator {
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        check_size(size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = Init::Normal(GAN_INIT_STD);
        let mut layers = Vec::new();
        let mut in_c = 4;
        for &c in &DISCRIMINATOR_CHANNELS {
            layers.push(Layer::Conv(Conv2d::new(in_c, c, 4, 2, 1, false, init, &mut rng)));
            layers.push(Layer::BatchNorm(BatchNorm2d::with_random_scale(c, GAN_INIT_STD, &mut rng)));
            layers.push(Layer::Act(Activation::LeakyRelu(0.2)));
            in_c = c;
        }
        layers.push(Layer::Conv(Conv2d::new(in_c, 1, 4, 1, 1, true, init, &mut rng)));
        Ok(Discriminator {
            size,
            net: Sequential::new(layers),
        })
    }

    /// Number of patch judgements per image.
    pub fn patches(&self) -> usize {
        let side = self.size / 8 - 1;
        side * side
    }

    /// Per-patch probabilities that the input is a translated image rather
    /// than an actual rendering, image-major (`n * patches()` values).
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Vec<f32>, DiscriminatorCache)> {
        check_input(x, self.size)?;
        let (map, layers) = self.net.forward(x, mode);
        debug_assert_eq!(map.item_len(), self.patches());
        let probs: Vec<f32> = map.data.iter().map(|&z| (1.0 / (1.0 + (-f64::from(z)).exp())) as f32).collect();
        Ok((
            probs.clone(),
            DiscriminatorCache {
                layers,
                map_shape: map.shape,
                probs,
            },
        ))
    }

    /// Takes the gradient with respect to each patch probability and
    /// returns the gradient with respect to the input images.
    pub fn backward(&mut self, cache: &DiscriminatorCache, grad_probs: &[f32], param_grads: bool) -> Tensor {
        let data = cache.probs.iter().zip(grad_probs).map(|(&p, &g)| g * p * (1.0 - p)).collect();
        let dmap = Tensor { shape: cache.map_shape, data };
        self.net.backward(&cache.layers, &dmap, param_grads)
    }

    /// Eval-mode mean patch probability per image.
    pub fn discriminate(&mut self, images: &[ImageRGBA]) -> Result<Vec<f32>> {
        let x = images_to_tensor(images, self.size)?;
        let probs = self.forward(&x, Mode::Eval)?.0;
        let k = self.patches();
        Ok(probs.chunks(k).map(|c| c.iter().sum::<f32>() / k as f32).collect())
    }
}

impl Module for Discriminator {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.net.params_mut()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f32>)> {
        self.net.buffers_mut()
    }
}

/// The three networks re-created at the start of every training cycle.
#[derive(Debug, Clone)]
pub struct DomainAdaptation {
    pub i2r: Translator,
    pub r2i: Translator,
    pub d: Discriminator,
}

impl DomainAdaptation {
    /// Fresh networks; each one draws from its own stream derived from
    /// `seed`.
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        Ok(DomainAdaptation {
            i2r: reinitialize_translator(size, seed, DaKind::I2r)?,
            r2i: reinitialize_translator(size, seed, DaKind::R2i)?,
            d: Discriminator::new(size, derive_seed(seed, DaKind::D))?,
        })
    }
}

fn derive_seed(seed: u64, kind: DaKind) -> u64 {
    let salt = match kind {
        DaKind::I2r => 0x9e37_79b9_7f4a_7c15,
        DaKind::R2i => 0xbf58_476d_1ce4_e5b9,
        DaKind::D => 0x94d0_49bb_1331_11eb,
    };
    let mut z = seed ^ salt;
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn reinitialize_translator(size: usize, seed: u64, kind: DaKind) -> Result<Translator> {
    Translator::new(size, derive_seed(seed, kind))
}

/// Freshly initialized domain-adaptation network of the given kind.
pub enum DaNetwork {
    Translator(Translator),
    Discriminator(Discriminator),
}

pub fn reinitialize(kind: DaKind, size: usize, seed: u64) -> Result<DaNetwork> {
    Ok(match kind {
        DaKind::I2r | DaKind::R2i => DaNetwork::Translator(reinitialize_translator(size, seed, kind)?),
        DaKind::D => DaNetwork::Discriminator(Discriminator::new(size, derive_seed(seed, kind))?),
    })
}
