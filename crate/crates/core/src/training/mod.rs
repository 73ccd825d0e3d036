//! Co-evolutionary training: every cycle re-creates the domain-adaptation
//! networks, trains them against renderings of the frozen reconstruction
//! network, then trains the reconstruction network against the frozen
//! translator's pseudo-renderings.

mod checkpoint;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_VERSION};

use crate::data::{TrainingSample, TrainingSet};
use crate::error::{Error, Result};
use crate::geometry::MeshRegularizer;
use crate::geometry::vec3;
use crate::geometry::{decode_mesh, decode_mesh_backward, make_sphere_template, Mesh, Topology, VertexOffsets};
use crate::img::ImageRGBA;
use crate::losses::{
    combined_translator_losses, loss_discriminator_grad, loss_jaccard_grad, loss_reconstruction_grad, loss_style_nonsaturating_grad,
    mean_huber_grad, LossWeights,
};
use crate::networks::{images_to_tensor, DomainAdaptation, ReconNet};
use crate::nn::{Adam, AdamConfig, Mode, Module, Tensor};
use crate::renderer::{RenderSettings, Renderer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub cycles: usize,
    pub da_iters_per_cycle: usize,
    pub recon_iters_per_cycle: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub image_size: usize,
    pub render: RenderSettings,
    pub regularizer: MeshRegularizer,
    /// Domain-adaptation iterations per cycle used instead of
    /// `da_iters_per_cycle` when brightness perturbation is enabled.
    pub brightness_da_iters: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            cycles: 20,
            da_iters_per_cycle: 1500,
            recon_iters_per_cycle: 2000,
            batch_size: 64,
            learning_rate: 1e-4,
            loss_weights: LossWeights::default(),
            seed: 0,
            image_size: 64,
            render: RenderSettings::default(),
            regularizer: MeshRegularizer::default(),
            brightness_da_iters: Some(400),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("cycles", self.cycles),
            ("da_iters_per_cycle", self.da_iters_per_cycle),
            ("recon_iters_per_cycle", self.recon_iters_per_cycle),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.brightness_da_iters == Some(0) {
            return Err(Error::Config("brightness_da_iters must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return Err(Error::Config(format!(
                "image size must be a positive multiple of 32, got {}",
                self.image_size
            )));
        }
        if !(self.render.smoothing > 0.0) {
            return Err(Error::Config("render smoothing must be positive".into()));
        }
        self.loss_weights.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate as f32,
            ..AdamConfig::default()
        }
    }

    /// Domain-adaptation iterations per cycle on `set`.
    pub fn effective_da_iters(&self, set: &TrainingSet) -> usize {
        match self.brightness_da_iters {
            Some(n) if set.perturb().brightness_sigma > 0.0 => n,
            _ => self.da_iters_per_cycle,
        }
    }
}

/// splitmix64 of `seed ^ salt`.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const SALT_RECON_INIT: u64 = 1;
const SALT_SAMPLING: u64 = 2;
const SALT_NOISE: u64 = 3;
const SALT_PERTURB: u64 = 4;
const SALT_DA_INIT: u64 = 0x100;

/// Seed of the domain-adaptation networks of cycle `cycle`.
pub fn da_seed(seed: u64, cycle: usize) -> u64 {
    derive_seed(seed, SALT_DA_INIT + cycle as u64)
}

/// Independent random streams, one per purpose, so that changing how one
/// consumer draws never shifts another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngStreams {
    /// Which objects and views are drawn.
    pub sampling: ChaCha8Rng,
    /// Azimuth and brightness perturbation.
    pub perturb: ChaCha8Rng,
    /// Bottleneck noise of the translator autoencoder.
    pub noise: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64, perturb_seed: u64) -> Self {
        RngStreams {
            sampling: ChaCha8Rng::seed_from_u64(derive_seed(seed, SALT_SAMPLING)),
            perturb: ChaCha8Rng::seed_from_u64(derive_seed(perturb_seed, SALT_PERTURB)),
            noise: ChaCha8Rng::seed_from_u64(derive_seed(seed, SALT_NOISE)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DaOptimizers {
    pub i2r: Adam,
    pub r2i: Adam,
    pub d: Adam,
}

impl DaOptimizers {
    fn new(config: AdamConfig) -> Self {
        DaOptimizers {
            i2r: Adam::new(config),
            r2i: Adam::new(config),
            d: Adam::new(config),
        }
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct CycleState {
    /// Number of completed cycles.
    pub cycle_index: usize,
    pub recon: ReconNet,
    pub recon_opt: Adam,
    pub da: DomainAdaptation,
    pub da_opts: DaOptimizers,
    pub rngs: RngStreams,
    pub da_steps: u64,
    pub recon_steps: u64,
}

impl CycleState {
    pub fn new(config: &TrainConfig, perturb_seed: u64) -> Result<Self> {
        Ok(CycleState {
            cycle_index: 0,
            recon: ReconNet::new(config.image_size, derive_seed(config.seed, SALT_RECON_INIT))?,
            recon_opt: Adam::new(config.adam()),
            da: DomainAdaptation::new(config.image_size, da_seed(config.seed, 0))?,
            da_opts: DaOptimizers::new(config.adam()),
            rngs: RngStreams::new(config.seed, perturb_seed),
            da_steps: 0,
            recon_steps: 0,
        })
    }

    pub fn to_checkpoint(&mut self, config: &TrainConfig) -> Checkpoint {
        let mut ck = Checkpoint {
            header: CheckpointHeader {
                format_version: CHECKPOINT_VERSION,
                cycle_index: self.cycle_index,
                image_size: config.image_size,
                config: config.clone(),
                rngs: self.rngs.clone(),
                recon_optimizer_steps: self.recon_opt.t,
                da_steps: self.da_steps,
                recon_steps: self.recon_steps,
            },
            tensors: Default::default(),
        };
        ck.insert_group("recon", self.recon.state());
        ck.insert_group("i2r", self.da.i2r.state());
        ck.insert_group("r2i", self.da.r2i.state());
        ck.insert_group("d", self.da.d.state());
        ck.insert_group("opt_recon", self.recon_opt.state());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let h = &ck.header;
        let config = &h.config;
        let mut state = CycleState {
            cycle_index: h.cycle_index,
            recon: load_recon(ck)?,
            recon_opt: Adam::new(config.adam()),
            da: load_domain_adaptation(ck)?,
            da_opts: DaOptimizers::new(config.adam()),
            rngs: h.rngs.clone(),
            da_steps: h.da_steps,
            recon_steps: h.recon_steps,
        };
        let names: Vec<(String, usize)> =
            state.recon.params_mut().into_iter().map(|(n, p)| (n, p.len())).collect();
        state
            .recon_opt
            .load_state(&names, h.recon_optimizer_steps, &ck.group("opt_recon"))?;
        Ok(state)
    }
}

/// The reconstruction network stored in a checkpoint.
pub fn load_recon(ck: &Checkpoint) -> Result<ReconNet> {
    let mut recon = ReconNet::new(ck.header.image_size, 0)?;
    recon.load_state(&ck.group("recon"))?;
    Ok(recon)
}

/// The domain-adaptation networks stored in a checkpoint.
pub fn load_domain_adaptation(ck: &Checkpoint) -> Result<DomainAdaptation> {
    let mut da = DomainAdaptation::new(ck.header.image_size, 0)?;
    da.i2r.load_state(&ck.group("i2r"))?;
    da.r2i.load_state(&ck.group("r2i"))?;
    da.d.load_state(&ck.group("d"))?;
    Ok(da)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Da,
    Recon,
}

/// One row of the loss log; columns that do not apply to a phase are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub cycle: usize,
    pub phase: Phase,
    pub iter: usize,
    pub loss_d: Option<f64>,
    pub loss_style: Option<f64>,
    pub loss_jaccard: Option<f64>,
    /// Cycle-consistency content loss of the rendering-to-image update.
    pub loss_content: Option<f64>,
    pub loss_i2r: Option<f64>,
    pub loss_r2i: Option<f64>,
    pub loss_recon: Option<f64>,
    pub loss_reg: Option<f64>,
}

impl LogRow {
    fn new(cycle: usize, phase: Phase, iter: usize) -> Self {
        LogRow {
            cycle,
            phase,
            iter,
            loss_d: None,
            loss_style: None,
            loss_jaccard: None,
            loss_content: None,
            loss_i2r: None,
            loss_r2i: None,
            loss_recon: None,
            loss_reg: None,
        }
    }
}

pub fn write_log_csv(rows: &[LogRow], path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log_csv(path: &Path) -> Result<Vec<LogRow>> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    r.deserialize().map(|row| row.map_err(io)).collect()
}

/// Per-cycle summary handed to the cycle callback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    /// Zero-based index of the finished cycle.
    pub cycle: usize,
    pub da_iters: usize,
    pub recon_iters: usize,
    /// Mean content loss over the first and last 50 DA iterations.
    pub content_first: f64,
    pub content_last: f64,
    /// Mean reconstruction loss over the first and last 50 recon iterations.
    pub recon_first: f64,
    pub recon_last: f64,
    pub seconds: f64,
}

fn window_means(values: &[f64], k: usize) -> (f64, f64) {
    let mean = |s: &[f64]| if s.is_empty() { f64::NAN } else { s.iter().sum::<f64>() / s.len() as f64 };
    let k = k.min(values.len());
    (mean(&values[..k]), mean(&values[values.len() - k..]))
}

/// Drives the phases of one training run over a borrowed training set.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub state: CycleState,
    pub log: Vec<LogRow>,
    set: &'a TrainingSet,
    renderer: Renderer,
    template: Mesh,
    topology: Topology,
}

type ViewKey = (usize, usize);

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, set: &'a TrainingSet) -> Result<Self> {
        config.validate()?;
        let state = CycleState::new(&config, set.perturb().seed)?;
        Self::with_state(config, set, state)
    }

    /// Continues from a checkpoint. Only the number of cycles may differ
    /// from the checkpointed configuration.
    pub fn resume(config: TrainConfig, set: &'a TrainingSet, ck: &Checkpoint) -> Result<Self> {
        config.validate()?;
        let saved = TrainConfig {
            cycles: config.cycles,
            ..ck.header.config.clone()
        };
        if saved != config {
            return Err(Error::Checkpoint(
                "checkpoint was written with a different training configuration".into(),
            ));
        }
        Self::with_state(config, set, CycleState::from_checkpoint(ck)?)
    }

    fn with_state(config: TrainConfig, set: &'a TrainingSet, state: CycleState) -> Result<Self> {
        if set.image_size() != config.image_size {
            return Err(Error::Config(format!(
                "dataset images are {0}x{0} but the configuration expects {1}x{1}",
                set.image_size(),
                config.image_size
            )));
        }
        let template = make_sphere_template();
        Ok(Trainer {
            renderer: Renderer::new(config.render),
            topology: Topology::of(&template),
            template,
            config,
            state,
            log: Vec::new(),
            set,
        })
    }

    /// Re-creates the domain-adaptation networks and their optimizers for
    /// the current cycle.
    pub fn begin_cycle(&mut self) -> Result<()> {
        let seed = da_seed(self.config.seed, self.state.cycle_index);
        self.state.da = DomainAdaptation::new(self.config.image_size, seed)?;
        self.state.da_opts = DaOptimizers::new(self.config.adam());
        Ok(())
    }

    /// One full cycle: re-initialization, domain adaptation, reconstruction.
    pub fn run_cycle(&mut self) -> Result<CycleReport> {
        let start = Instant::now();
        let cycle = self.state.cycle_index;
        self.begin_cycle()?;
        let da_iters = self.config.effective_da_iters(self.set);
        let da_rows = self.train_da_phase(da_iters)?;
        let recon_rows = self.train_recon_phase(self.config.recon_iters_per_cycle)?;
        let content: Vec<f64> = da_rows.iter().filter_map(|r| r.loss_content).collect();
        let recon: Vec<f64> = recon_rows.iter().filter_map(|r| r.loss_recon).collect();
        let (content_first, content_last) = window_means(&content, 50);
        let (recon_first, recon_last) = window_means(&recon, 50);
        self.log.extend(da_rows);
        self.log.extend(recon_rows);
        self.state.cycle_index += 1;
        let report = CycleReport {
            cycle,
            da_iters,
            recon_iters: self.config.recon_iters_per_cycle,
            content_first,
            content_last,
            recon_first,
            recon_last,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "cycle {cycle}: content {:.5} -> {:.5}, recon {:.5} -> {:.5} ({:.0}s)",
            report.content_first,
            report.content_last,
            report.recon_first,
            report.recon_last,
            report.seconds
        );
        Ok(report)
    }

    fn render_cacheable(&self) -> bool {
        self.set.perturb().azimuth_sigma == 0.0 && !self.set.images_are_perturbed()
    }

    /// Renderings of the frozen reconstruction network's predictions.
    fn frozen_renderings(
        &mut self,
        samples: &[TrainingSample],
        cache: &mut HashMap<ViewKey, ImageRGBA>,
    ) -> Result<Vec<ImageRGBA>> {
        let cacheable = self.render_cacheable();
        let missing: Vec<usize> = (0..samples.len())
            .filter(|&i| !cacheable || !cache.contains_key(&(samples[i].object, samples[i].view_index)))
            .collect();
        let mut fresh: HashMap<usize, ImageRGBA> = HashMap::new();
        if !missing.is_empty() {
            let images: Vec<ImageRGBA> = missing.iter().map(|&i| samples[i].image.clone()).collect();
            let meshes = self.state.recon.reconstruct(&images, &self.template)?;
            for (&i, mesh) in missing.iter().zip(&meshes) {
                fresh.insert(i, self.renderer.render_image(mesh, &samples[i].view));
            }
        }
        Ok((0..samples.len())
            .map(|i| {
                let key = (samples[i].object, samples[i].view_index);
                match fresh.remove(&i) {
                    Some(img) => {
                        if cacheable {
                            cache.insert(key, img.clone());
                        }
                        img
                    }
                    None => cache[&key].clone(),
                }
            })
            .collect())
    }

    fn add_noise(&mut self, t: &Tensor) -> Tensor {
        let sigma = self.config.loss_weights.noise_sigma;
        let mut out = t.clone();
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            for v in &mut out.data {
                *v += normal.sample(&mut self.state.rngs.noise) as f32;
            }
        }
        out
    }

    /// Domain-adaptation phase. The reconstruction network is only run in
    /// evaluation mode and never receives gradients.
    pub fn train_da_phase(&mut self, iters: usize) -> Result<Vec<LogRow>> {
        let mut cache = HashMap::new();
        let mut rows = Vec::with_capacity(iters);
        for iter in 0..iters {
            rows.push(self.da_step(iter, &mut cache)?);
            self.state.da_steps += 1;
        }
        Ok(rows)
    }

    fn da_step(&mut self, iter: usize, cache: &mut HashMap<ViewKey, ImageRGBA>) -> Result<LogRow> {
        let w = self.config.loss_weights;
        let size = self.config.image_size;
        let npix = size * size;
        let st = &mut self.state;
        let samples = self
            .set
            .sample_batch(self.config.batch_size, &mut st.rngs.sampling, &mut st.rngs.perturb);
        let images: Vec<ImageRGBA> = samples.iter().map(|s| s.image.clone()).collect();
        let x = images_to_tensor(&images, size)?;
        let rendered = self.frozen_renderings(&samples, cache)?;
        let r = images_to_tensor(&rendered, size)?;
        let mut row = LogRow::new(self.state.cycle_index, Phase::Da, iter);

        // discriminator
        let da = &mut self.state.da;
        let (t, _) = da.i2r.forward(&x, Mode::Train)?;
        let (p_r, c_r) = da.d.forward(&r, Mode::Train)?;
        let (p_t, c_t) = da.d.forward(&t, Mode::Train)?;
        let (loss_d, g_r, g_t) = loss_discriminator_grad(&p_r, &p_t)?;
        da.d.zero_grad();
        da.d.backward(&c_r, &to_f32(&g_r, 1.0), true);
        da.d.backward(&c_t, &to_f32(&g_t, 1.0), true);
        self.state.da_opts.d.step(self.state.da.d.params_mut());
        row.loss_d = Some(loss_d);

        // image-to-rendering translator: style + Jaccard + content
        let da = &mut self.state.da;
        let (t, c_i2r) = da.i2r.forward(&x, Mode::Train)?;
        let (p_t, c_dt) = da.d.forward(&t, Mode::Train)?;
        let (loss_style, g_p) = loss_style_nonsaturating_grad(&p_t);
        let mut g_t = da.d.backward(&c_dt, &to_f32(&g_p, w.style_w), false);
        let r_alpha: Vec<&[f32]> = (0..r.n()).map(|i| &r.item(i)[3 * npix..]).collect();
        let t_alpha: Vec<&[f32]> = (0..t.n()).map(|i| &t.item(i)[3 * npix..]).collect();
        let (loss_jaccard, g_jac) = loss_jaccard_grad(&r_alpha, &t_alpha, w.jaccard_delta)?;
        let item = t.item_len();
        for (i, g) in g_jac.iter().enumerate() {
            for (dst, &v) in g_t.data[i * item + 3 * npix..(i + 1) * item].iter_mut().zip(g) {
                *dst += v as f32;
            }
        }
        let noisy = self.add_noise(&t);
        let da = &mut self.state.da;
        let (x_rt, c_r2i) = da.r2i.forward(&noisy, Mode::Train)?;
        let (content, g_rt) = mean_huber_grad(&x.data, &x_rt.data, w.huber_threshold)?;
        let g_rt = Tensor::from_vec(x_rt.shape, to_f32(&g_rt, w.content_w))?;
        let g_noisy = da.r2i.backward(&c_r2i, &g_rt, false);
        g_t.add_assign(&g_noisy);
        da.i2r.zero_grad();
        da.i2r.backward(&c_i2r, &g_t, true);
        self.state.da_opts.i2r.step(self.state.da.i2r.params_mut());
        let (loss_i2r, _) = combined_translator_losses(content, loss_style, loss_jaccard, &w);
        row.loss_style = Some(loss_style);
        row.loss_jaccard = Some(loss_jaccard);
        row.loss_i2r = Some(loss_i2r);

        // rendering-to-image translator: content only
        let (t, _) = self.state.da.i2r.forward(&x, Mode::Train)?;
        let noisy = self.add_noise(&t);
        let da = &mut self.state.da;
        let (x_rt, c_r2i) = da.r2i.forward(&noisy, Mode::Train)?;
        let (content, g_rt) = mean_huber_grad(&x.data, &x_rt.data, w.huber_threshold)?;
        let g_rt = Tensor::from_vec(x_rt.shape, to_f32(&g_rt, w.content_w))?;
        da.r2i.zero_grad();
        da.r2i.backward(&c_r2i, &g_rt, true);
        self.state.da_opts.r2i.step(self.state.da.r2i.params_mut());
        row.loss_content = Some(content);
        row.loss_r2i = Some(combined_translator_losses(content, 0.0, 0.0, &w).1);
        Ok(row)
    }

    /// Pseudo-renderings of the frozen image-to-rendering translator.
    fn pseudo_renderings(
        &mut self,
        samples: &[&TrainingSample],
        cache: &mut HashMap<ViewKey, ImageRGBA>,
    ) -> Result<Vec<ImageRGBA>> {
        let cacheable = !self.set.images_are_perturbed();
        let mut missing: Vec<usize> = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            let key = (s.object, s.view_index);
            let seen = missing
                .iter()
                .any(|&j| (samples[j].object, samples[j].view_index) == key);
            if !cacheable || (!cache.contains_key(&key) && !seen) {
                missing.push(i);
            }
        }
        let mut fresh: HashMap<usize, ImageRGBA> = HashMap::new();
        if !missing.is_empty() {
            let images: Vec<ImageRGBA> = missing.iter().map(|&i| samples[i].image.clone()).collect();
            let out = self.state.da.i2r.translate(&images)?;
            for (&i, img) in missing.iter().zip(out) {
                if cacheable {
                    cache.insert((samples[i].object, samples[i].view_index), img.clone());
                }
                fresh.insert(i, img);
            }
        }
        Ok((0..samples.len())
            .map(|i| match fresh.remove(&i) {
                Some(img) => img,
                None => cache[&(samples[i].object, samples[i].view_index)].clone(),
            })
            .collect())
    }

    /// Reconstruction phase. Translators and discriminator are only run in
    /// evaluation mode and never receive gradients.
    pub fn train_recon_phase(&mut self, iters: usize) -> Result<Vec<LogRow>> {
        let mut cache = HashMap::new();
        let mut rows = Vec::with_capacity(iters);
        for iter in 0..iters {
            rows.push(self.recon_step(iter, &mut cache)?);
            self.state.recon_steps += 1;
        }
        Ok(rows)
    }

    fn recon_step(&mut self, iter: usize, cache: &mut HashMap<ViewKey, ImageRGBA>) -> Result<LogRow> {
        let b = self.config.batch_size;
        let size = self.config.image_size;
        let thr = self.config.loss_weights.huber_threshold;
        let st = &mut self.state;
        let pairs: Vec<(TrainingSample, TrainingSample)> = (0..b)
            .map(|_| self.set.sample_pair(&mut st.rngs.sampling, &mut st.rngs.perturb))
            .collect();
        let xs: Vec<&TrainingSample> = pairs.iter().map(|p| &p.0).collect();
        let ys: Vec<&TrainingSample> = pairs.iter().map(|p| &p.1).collect();
        let tx = self.pseudo_renderings(&xs, cache)?;
        let ty = self.pseudo_renderings(&ys, cache)?;
        let images: Vec<ImageRGBA> = xs.iter().map(|s| s.image.clone()).collect();
        let x = images_to_tensor(&images, size)?;
        let (out, caches) = self.state.recon.forward(&x, Mode::Train)?;

        let nv = self.template.vertices.len();
        let inv_b = 1.0 / b as f64;
        let mut grad = Tensor::zeros(out.shape);
        let item = out.item_len();
        let (mut loss, mut reg) = (0.0, 0.0);
        for i in 0..b {
            let offsets = VertexOffsets::from_flat(out.item(i), nv)?;
            let mesh = decode_mesh(&offsets, &self.template)?;
            let rx = self.renderer.forward(&mesh, &xs[i].view);
            let ry = self.renderer.forward(&mesh, &ys[i].view);
            let (l, gx, gy) = loss_reconstruction_grad(&rx.rgba, &tx[i].data, &ry.rgba, &ty[i].data, thr)?;
            loss += l * inv_b;
            let scale = |g: Vec<f64>| g.into_iter().map(|v| v * inv_b).collect::<Vec<_>>();
            let gvx = self.renderer.backward(&rx, nv, &scale(gx));
            let gvy = self.renderer.backward(&ry, nv, &scale(gy));
            let (terms, greg) = self.config.regularizer.value_and_grad(&mesh, &self.topology);
            reg += terms.total * inv_b;
            let gv: Vec<vec3::Vec3> = (0..nv)
                .map(|k| vec3::add(vec3::add(gvx[k], gvy[k]), vec3::scale(greg[k], inv_b)))
                .collect();
            let graw = decode_mesh_backward(&offsets, &gv);
            grad.data[i * item..(i + 1) * item].copy_from_slice(&graw);
        }
        let recon = &mut self.state.recon;
        recon.zero_grad();
        recon.backward(&caches, &grad);
        self.state.recon_opt.step(self.state.recon.params_mut());

        let mut row = LogRow::new(self.state.cycle_index, Phase::Recon, iter);
        row.loss_recon = Some(loss);
        row.loss_reg = Some(reg);
        Ok(row)
    }

    pub fn checkpoint(&mut self) -> Checkpoint {
        self.state.to_checkpoint(&self.config)
    }
}

fn to_f32(v: &[f64], scale: f64) -> Vec<f32> {
    v.iter().map(|&x| (x * scale) as f32).collect()
}

/// Where [`run_training`] writes its outputs.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    pub fn log(&self) -> PathBuf {
        self.root.join("loss_log.csv")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    /// Checkpoint written after `completed` cycles.
    pub fn checkpoint(&self, completed: usize) -> PathBuf {
        self.checkpoint_dir().join(format!("cycle_{completed:03}.safetensors"))
    }

    /// Most recent checkpoint on disk, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<PathBuf>> {
        let dir = self.checkpoint_dir();
        if !dir.exists() {
            return Ok(None);
        }
        let mut found: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "safetensors"))
            .collect();
        found.sort();
        Ok(found.pop())
    }
}

/// Final state of a training run.
pub struct TrainOutcome {
    pub state: CycleState,
    pub log: Vec<LogRow>,
    pub reports: Vec<CycleReport>,
    pub final_checkpoint: Checkpoint,
}

/// Runs every remaining cycle, writing a checkpoint and the loss log after
/// each one when `paths` is given. `on_cycle` runs after every cycle and
/// may inspect (but should not train) the networks.
pub fn run_training(
    config: &TrainConfig,
    set: &TrainingSet,
    paths: Option<&RunPaths>,
    resume: Option<&Checkpoint>,
    mut on_cycle: impl FnMut(&mut CycleState, &CycleReport) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = match resume {
        Some(ck) => Trainer::resume(config.clone(), set, ck)?,
        None => Trainer::new(config.clone(), set)?,
    };
    if let Some(p) = paths {
        let dir = p.checkpoint_dir();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        if resume.is_some() && p.log().exists() {
            let done = trainer.state.cycle_index;
            trainer.log = read_log_csv(&p.log())?.into_iter().filter(|r| r.cycle < done).collect();
        }
    }
    let mut reports = Vec::new();
    while trainer.state.cycle_index < config.cycles {
        let report = trainer.run_cycle()?;
        if let Some(p) = paths {
            let ck = trainer.checkpoint();
            ck.save(&p.checkpoint(trainer.state.cycle_index))?;
            write_log_csv(&trainer.log, &p.log())?;
        }
        on_cycle(&mut trainer.state, &report)?;
        reports.push(report);
    }
    let final_checkpoint = trainer.checkpoint();
    Ok(TrainOutcome {
        state: trainer.state,
        log: trainer.log,
        reports,
        final_checkpoint,
    })
}
