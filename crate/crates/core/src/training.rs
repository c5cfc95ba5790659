//! The alternating minimax training loop, periodic scoring, checkpointing,
//! and sample generation.
//!
//! Determinism contract: given one config and one dataset, every artifact
//! byte (metrics CSV, checkpoints, sample grids) is reproducible. All
//! randomness flows through fixed-purpose streams derived from the config
//! seed, so the schedule of draws never depends on timing or iteration
//! interleaving:
//!
//!   stream 0        generator init
//!   stream 1        discriminator init
//!   stream 2        training latents
//!   stream 3        dropout masks
//!   stream 4        evaluation latents and the startup probe
//!   stream 5        sample-grid latents (fixed per run, so grids written
//!                   over training show the same latents evolving)
//!   stream 0x100+e  epoch-e shuffle

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::checkpoint::{Checkpoint, NamedTensor, TensorBuf};
use crate::data::{
    load_image, make_epoch_batches, resize_bilinear, save_png, to_model_range, DatasetIndex,
    ImageU8,
};
use crate::error::{Error, Result};
use crate::fid::{embed_images, frechet_distance, gaussian_stats, EmbedderSpec, GaussianStats};
use crate::grid::emit_grid;
use crate::layers::Mode;
use crate::losses::{
    dcgan_d_loss, dcgan_d_loss_grads, dcgan_g_loss, dcgan_g_loss_grad, wgan_critic_loss,
    wgan_critic_loss_grads, wgan_g_loss, wgan_g_loss_grad,
};
use crate::models::{
    backward, build_boolgan_generator, build_dcgan_generator, build_discriminator,
    commit_bn_updates, forward, infer_generator_spec, init_params, ModelSpec, ParamSet,
};
use crate::optim::{adam_step, clip_weights, rmsprop_step, OptState};
use crate::rng::RngStream;
use crate::tensor::{randn, Dtype, Scalar, Tensor};

pub const STREAM_G_INIT: u64 = 0;
pub const STREAM_D_INIT: u64 = 1;
pub const STREAM_LATENT: u64 = 2;
pub const STREAM_DROPOUT: u64 = 3;
pub const STREAM_EVAL: u64 = 4;
pub const STREAM_GRID: u64 = 5;
pub const STREAM_SHUFFLE_BASE: u64 = 0x100;

/// Image extent the models are built for.
pub const IMAGE_EXTENT: usize = 64;
/// Dropout probability used by the dropout regimes.
pub const DEFAULT_DROPOUT_P: f64 = 0.2;
/// Datasets up to this many images are decoded once and kept resident.
const PRELOAD_CAP: usize = 8192;
/// Generation happens in sub-batches of this size.
const GEN_CHUNK: usize = 64;
/// Denominator guard for both optimizers.
const OPT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Dcgan,
    Boolgan,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dcgan => "dcgan",
            ModelKind::Boolgan => "boolgan",
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        match s {
            "dcgan" => Ok(ModelKind::Dcgan),
            "boolgan" => Ok(ModelKind::Boolgan),
            other => Err(Error::InvalidArgument {
                context: format!("unknown model {other:?} (expected dcgan or boolgan)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Dcgan,
    Wgan,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Dcgan => "dcgan",
            LossKind::Wgan => "wgan",
        }
    }

    pub fn parse(s: &str) -> Result<LossKind> {
        match s {
            "dcgan" => Ok(LossKind::Dcgan),
            "wgan" => Ok(LossKind::Wgan),
            other => Err(Error::InvalidArgument {
                context: format!("unknown loss {other:?} (expected dcgan or wgan)"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Rmsprop => "rmsprop",
        }
    }

    pub fn parse(s: &str) -> Result<OptimizerKind> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            other => Err(Error::InvalidArgument {
                context: format!("unknown optimizer {other:?} (expected adam or rmsprop)"),
            }),
        }
    }
}

/// The five canonical experiment configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Baseline,
    Dropout,
    Wgan,
    WganDropout,
    Boolgan,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::Baseline,
        Regime::Dropout,
        Regime::Wgan,
        Regime::WganDropout,
        Regime::Boolgan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::Dropout => "dropout",
            Regime::Wgan => "wgan",
            Regime::WganDropout => "wgan-dropout",
            Regime::Boolgan => "boolgan",
        }
    }
}

/// Everything a training run depends on. Every field has a working
/// default; the baseline default is the plain 64x64 deep-conv GAN with
/// Adam at lr 2e-4, momentum 0.5/0.999, batch 128, 50 epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub loss: LossKind,
    /// Discriminator dropout before its final conv; 0 disables the layer.
    pub dropout_p: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub optimizer: OptimizerKind,
    /// RMSProp decay, used only when optimizer = rmsprop.
    pub rho: f64,
    /// Critic weight-clip bound, used only when loss = wgan.
    pub clip_c: f64,
    /// Whether the clip also covers batchnorm gamma/beta.
    pub clip_bn: bool,
    pub n_critic: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub z_dim: usize,
    pub base_width: usize,
    pub seed: u64,
    pub fid_every_n_iters: usize,
    pub fid_sample_count: usize,
    /// Halve both learning rates every this many epochs; 0 disables.
    pub lr_halve_every_epochs: usize,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub drop_last: bool,
    pub embedder: EmbedderSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Dcgan,
            loss: LossKind::Dcgan,
            dropout_p: 0.0,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            optimizer: OptimizerKind::Adam,
            rho: 0.9,
            clip_c: 0.1,
            clip_bn: true,
            n_critic: 1,
            batch_size: 128,
            epochs: 50,
            z_dim: 100,
            base_width: 64,
            seed: 0,
            fid_every_n_iters: 500,
            fid_sample_count: 1024,
            lr_halve_every_epochs: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            drop_last: true,
            embedder: EmbedderSpec::default(),
        }
    }
}

impl TrainConfig {
    /// One of the five canonical configurations, differing from the
    /// baseline only in the documented knobs.
    pub fn regime(regime: Regime) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        match regime {
            Regime::Baseline => {}
            Regime::Dropout => cfg.dropout_p = DEFAULT_DROPOUT_P,
            Regime::Wgan => cfg.loss = LossKind::Wgan,
            Regime::WganDropout => {
                cfg.loss = LossKind::Wgan;
                cfg.dropout_p = DEFAULT_DROPOUT_P;
            }
            Regime::Boolgan => {
                cfg.model = ModelKind::Boolgan;
                cfg.lr_g = 7.5e-4;
                cfg.lr_d = 7.5e-4;
                // Trained longer in the reference experiments; placeholder.
                cfg.epochs = 80;
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |context: String| Err(Error::InvalidArgument { context });
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return bad(format!("learning rates must be positive, got g {} d {}", self.lr_g, self.lr_d));
        }
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0 && self.beta2 >= 0.0 && self.beta2 < 1.0) {
            return bad(format!("adam betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rmsprop rho must lie in (0, 1), got {}", self.rho));
        }
        if self.loss == LossKind::Wgan && !(self.clip_c > 0.0) {
            return bad(format!("wgan loss requires a positive clip_c, got {}", self.clip_c));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if self.n_critic == 0 {
            return bad("n_critic must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".to_string());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".to_string());
        }
        if self.z_dim == 0 {
            return bad("z_dim must be at least 1".to_string());
        }
        if self.base_width < 8 || self.base_width % 8 != 0 {
            return bad(format!("base_width must be a positive multiple of 8, got {}", self.base_width));
        }
        if self.fid_every_n_iters == 0 {
            return bad("fid_every_n_iters must be at least 1".to_string());
        }
        if self.fid_sample_count < 2 {
            return bad(format!("fid_sample_count must be at least 2, got {}", self.fid_sample_count));
        }
        Ok(())
    }

    /// Hash of the fields that influence the computation. Paths are
    /// excluded on purpose: runs into different directories from the same
    /// settings must produce identical checkpoints.
    pub fn config_hash(&self) -> u64 {
        let dump = format!(
            "model={} loss={} dropout_p={:?} lr_g={:?} lr_d={:?} beta1={:?} beta2={:?} \
             optimizer={} rho={:?} clip_c={:?} clip_bn={} n_critic={} batch_size={} \
             epochs={} z_dim={} base_width={} seed={} fid_every={} fid_samples={} \
             lr_halve={} drop_last={} embedder_seed={} embedder_dim={}",
            self.model.name(),
            self.loss.name(),
            self.dropout_p,
            self.lr_g,
            self.lr_d,
            self.beta1,
            self.beta2,
            self.optimizer.name(),
            self.rho,
            self.clip_c,
            self.clip_bn,
            self.n_critic,
            self.batch_size,
            self.epochs,
            self.z_dim,
            self.base_width,
            self.seed,
            self.fid_every_n_iters,
            self.fid_sample_count,
            self.lr_halve_every_epochs,
            self.drop_last,
            self.embedder.seed,
            self.embedder.output_dim,
        );
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in dump.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    pub fn generator_spec(&self) -> Result<ModelSpec> {
        match self.model {
            ModelKind::Dcgan => build_dcgan_generator(self.z_dim, self.base_width),
            ModelKind::Boolgan => build_boolgan_generator(self.z_dim, self.base_width),
        }
    }

    pub fn discriminator_spec(&self) -> Result<ModelSpec> {
        build_discriminator(self.loss == LossKind::Wgan, self.dropout_p, self.base_width)
    }
}

/// Mutable state of a run: both models, optimizer state, and the live
/// RNG streams.
#[derive(Debug)]
pub struct TrainState<T: Scalar> {
    pub g_spec: ModelSpec,
    pub d_spec: ModelSpec,
    pub g_params: ParamSet<T>,
    pub d_params: ParamSet<T>,
    pub g_opt: OptState<T>,
    pub d_opt: OptState<T>,
    pub latent_rng: RngStream,
    pub dropout_rng: RngStream,
    pub iteration: u64,
    /// Effective learning rates (the schedule scales them per epoch).
    pub lr_g: f64,
    pub lr_d: f64,
    /// Update counters, for instrumentation and tests.
    pub d_updates: u64,
    pub g_updates: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(cfg: &TrainConfig) -> Result<TrainState<T>> {
        cfg.validate()?;
        let g_spec = cfg.generator_spec()?;
        let d_spec = cfg.discriminator_spec()?;
        let g_params = init_params(&g_spec, &mut RngStream::new(cfg.seed, STREAM_G_INIT))?;
        let d_params = init_params(&d_spec, &mut RngStream::new(cfg.seed, STREAM_D_INIT))?;
        Ok(TrainState {
            g_spec,
            d_spec,
            g_params,
            d_params,
            g_opt: OptState::new(),
            d_opt: OptState::new(),
            latent_rng: RngStream::new(cfg.seed, STREAM_LATENT),
            dropout_rng: RngStream::new(cfg.seed, STREAM_DROPOUT),
            iteration: 0,
            lr_g: cfg.lr_g,
            lr_d: cfg.lr_d,
            d_updates: 0,
            g_updates: 0,
        })
    }
}

fn add_param_sets<T: Scalar>(into: &mut ParamSet<T>, other: &ParamSet<T>) -> Result<()> {
    for (name, g) in other.iter() {
        let dst = into.get_mut(name).ok_or_else(|| Error::InvalidArgument {
            context: format!("gradient sets disagree on parameter {name}"),
        })?;
        if dst.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                context: format!("gradient shapes for {name} disagree"),
            });
        }
        for (d, &s) in dst.data_mut().iter_mut().zip(g.data()) {
            *d = *d + s;
        }
    }
    Ok(())
}

fn optimizer_step<T: Scalar>(
    cfg: &TrainConfig,
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    opt: &mut OptState<T>,
    lr: f64,
) -> Result<()> {
    match cfg.optimizer {
        OptimizerKind::Adam => adam_step(params, grads, opt, lr, cfg.beta1, cfg.beta2, OPT_EPS),
        OptimizerKind::Rmsprop => rmsprop_step(params, grads, opt, lr, cfg.rho, OPT_EPS),
    }
}

fn critic_update<T: Scalar>(
    state: &mut TrainState<T>,
    real: &Tensor<T>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let batch = real.shape()[0];
    let z: Tensor<T> = randn(&[batch, cfg.z_dim, 1, 1], &mut state.latent_rng);
    let (fake, g_cache) = forward(
        &state.g_spec,
        &state.g_params,
        &z,
        Mode::Train,
        &mut state.dropout_rng,
    )?;
    commit_bn_updates(&mut state.g_params, &g_cache)?;
    let (score_real, cache_real) = forward(
        &state.d_spec,
        &state.d_params,
        real,
        Mode::Train,
        &mut state.dropout_rng,
    )?;
    commit_bn_updates(&mut state.d_params, &cache_real)?;
    let (score_fake, cache_fake) = forward(
        &state.d_spec,
        &state.d_params,
        &fake,
        Mode::Train,
        &mut state.dropout_rng,
    )?;
    commit_bn_updates(&mut state.d_params, &cache_fake)?;
    let (loss, dy_real, dy_fake) = match cfg.loss {
        LossKind::Dcgan => {
            let loss = dcgan_d_loss(&score_real, &score_fake)?;
            let (dr, df) = dcgan_d_loss_grads(&score_real, &score_fake)?;
            (loss, dr, df)
        }
        LossKind::Wgan => {
            let loss = wgan_critic_loss(&score_real, &score_fake)?;
            let (dr, df) = wgan_critic_loss_grads(&score_real, &score_fake)?;
            (loss, dr, df)
        }
    };
    let (_, mut grads) = backward(&state.d_spec, &state.d_params, &cache_real, &dy_real, true)?;
    let (_, grads_fake) = backward(&state.d_spec, &state.d_params, &cache_fake, &dy_fake, true)?;
    add_param_sets(&mut grads, &grads_fake)?;
    optimizer_step(cfg, &mut state.d_params, &grads, &mut state.d_opt, state.lr_d)?;
    if cfg.loss == LossKind::Wgan {
        clip_weights(&mut state.d_params, cfg.clip_c, cfg.clip_bn);
    }
    state.d_updates += 1;
    Ok(loss)
}

fn generator_update<T: Scalar>(
    state: &mut TrainState<T>,
    batch: usize,
    cfg: &TrainConfig,
) -> Result<f64> {
    let z: Tensor<T> = randn(&[batch, cfg.z_dim, 1, 1], &mut state.latent_rng);
    let (fake, g_cache) = forward(
        &state.g_spec,
        &state.g_params,
        &z,
        Mode::Train,
        &mut state.dropout_rng,
    )?;
    commit_bn_updates(&mut state.g_params, &g_cache)?;
    let (score, d_cache) = forward(
        &state.d_spec,
        &state.d_params,
        &fake,
        Mode::Train,
        &mut state.dropout_rng,
    )?;
    commit_bn_updates(&mut state.d_params, &d_cache)?;
    let (loss, dy) = match cfg.loss {
        LossKind::Dcgan => (dcgan_g_loss(&score)?, dcgan_g_loss_grad(&score)?),
        LossKind::Wgan => (wgan_g_loss(&score)?, wgan_g_loss_grad(&score)?),
    };
    let (dx, _) = backward(&state.d_spec, &state.d_params, &d_cache, &dy, false)?;
    let (_, grads) = backward(&state.g_spec, &state.g_params, &g_cache, &dx, true)?;
    optimizer_step(cfg, &mut state.g_params, &grads, &mut state.g_opt, state.lr_g)?;
    state.g_updates += 1;
    Ok(loss)
}

/// One training iteration: `n_critic` discriminator/critic updates (each
/// on a fresh latent batch against `real`, clipped afterwards in the wgan
/// regime), then one generator update on another fresh latent batch.
/// Returns the last critic loss and the generator loss.
pub fn training_step<T: Scalar>(
    state: &mut TrainState<T>,
    real: &Tensor<T>,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    if real.shape().len() != 4 || real.shape()[0] == 0 {
        return Err(Error::ShapeMismatch {
            context: format!("training_step: expected a non-empty [N,3,H,W] real batch, got {:?}", real.shape()),
        });
    }
    let iteration = state.iteration + 1;
    let mut loss_d = 0.0;
    for i in 0..cfg.n_critic {
        loss_d = critic_update(state, real, cfg).map_err(|e| Error::Training {
            context: format!("iteration {iteration}, critic update {} of {}: {e}", i + 1, cfg.n_critic),
        })?;
    }
    let batch = real.shape()[0];
    let loss_g = generator_update(state, batch, cfg).map_err(|e| Error::Training {
        context: format!("iteration {iteration}, generator update: {e}"),
    })?;
    Ok((loss_d, loss_g))
}

/// Decode one dataset image into a model-range tensor at the training extent.
fn load_training_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = load_image(path)?;
    let img = resize_bilinear(&img, IMAGE_EXTENT, IMAGE_EXTENT);
    Ok(to_model_range(&img))
}

fn stack_samples<T: Scalar>(samples: &[Tensor<T>]) -> Result<Tensor<T>> {
    let shape = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument {
            context: "stack_samples: empty batch".to_string(),
        })?
        .shape()
        .to_vec();
    let mut data = Vec::with_capacity(samples.len() * samples[0].len());
    for s in samples {
        if s.shape() != shape {
            return Err(Error::ShapeMismatch {
                context: "stack_samples: mixed sample shapes".to_string(),
            });
        }
        data.extend_from_slice(s.data());
    }
    let mut full = vec![samples.len()];
    full.extend_from_slice(&shape);
    Tensor::from_vec(&full, data)
}

/// Images for a batch: from the preload cache when present, decoded on
/// demand otherwise. Both paths produce identical tensors.
fn assemble_batch<T: Scalar>(
    index: &DatasetIndex,
    preload: Option<&[Tensor<T>]>,
    ids: &[usize],
) -> Result<Tensor<T>> {
    let mut samples = Vec::with_capacity(ids.len());
    for &i in ids {
        match preload {
            Some(cache) => samples.push(cache[i].clone()),
            None => samples.push(load_training_image(index.path(i))?),
        }
    }
    stack_samples(&samples)
}

/// Generate `n` images: z ~ N(0, I) from the given stream, eval-mode
/// forward, bytes via round((x+1)*127.5).
pub fn generate_samples<T: Scalar>(
    g_spec: &ModelSpec,
    g_params: &ParamSet<T>,
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<ImageU8>> {
    if n == 0 {
        return Err(Error::InvalidArgument {
            context: "generate_samples: n must be at least 1".to_string(),
        });
    }
    let z_dim = g_spec.input_shape[0];
    let [c, h, w] = g_spec.output_shape;
    let mut images = Vec::with_capacity(n);
    let mut scratch = RngStream::new(0, 0);
    let mut remaining = n;
    while remaining > 0 {
        let count = GEN_CHUNK.min(remaining);
        let z: Tensor<T> = randn(&[count, z_dim, 1, 1], rng);
        let (out, _) = forward(g_spec, g_params, &z, Mode::Eval, &mut scratch)?;
        let sample_len = c * h * w;
        for i in 0..count {
            let t = Tensor::from_vec(
                &[c, h, w],
                out.data()[i * sample_len..(i + 1) * sample_len].to_vec(),
            )?;
            images.push(crate::data::from_model_range(&t)?);
        }
        remaining -= count;
    }
    Ok(images)
}

/// Feature statistics of generated samples: `count` latents from a fresh
/// evaluation stream, eval-mode forwards, embedded chunk by chunk.
pub fn generated_feature_stats<T: Scalar>(
    g_spec: &ModelSpec,
    g_params: &ParamSet<T>,
    count: usize,
    seed: u64,
    embedder: &EmbedderSpec,
) -> Result<GaussianStats> {
    let z_dim = g_spec.input_shape[0];
    let [c, h, w] = g_spec.output_shape;
    let mut z_rng = RngStream::new(seed, STREAM_EVAL);
    let mut scratch = RngStream::new(0, 0);
    let mut features: Vec<f64> = Vec::with_capacity(count * embedder.output_dim);
    let mut remaining = count;
    while remaining > 0 {
        let chunk = GEN_CHUNK.min(remaining);
        let z: Tensor<T> = randn(&[chunk, z_dim, 1, 1], &mut z_rng);
        let (out, _) = forward(g_spec, g_params, &z, Mode::Eval, &mut scratch)?;
        let mut imgs = Tensor::<f64>::zeros(&[chunk, c, h, w]);
        for (dst, src) in imgs.data_mut().iter_mut().zip(out.data()) {
            *dst = src.as_f64().clamp(-1.0, 1.0);
        }
        let rows = embed_images(&imgs, embedder)?;
        features.extend_from_slice(rows.data());
        remaining -= chunk;
    }
    gaussian_stats(&Tensor::from_vec(&[count, embedder.output_dim], features)?)
}

/// Feature statistics of the first `count` dataset images in index order.
pub fn real_feature_stats<T: Scalar>(
    index: &DatasetIndex,
    preload: Option<&[Tensor<T>]>,
    count: usize,
    embedder: &EmbedderSpec,
) -> Result<GaussianStats> {
    let take = count.min(index.len());
    let mut features: Vec<f64> = Vec::with_capacity(take * embedder.output_dim);
    let mut start = 0;
    while start < take {
        let chunk = GEN_CHUNK.min(take - start);
        let mut samples = Vec::with_capacity(chunk);
        for i in start..start + chunk {
            let t64: Tensor<f64> = match preload {
                Some(cache) => cache[i].cast(),
                None => load_training_image(index.path(i))?,
            };
            samples.push(t64);
        }
        let imgs = stack_samples(&samples)?;
        let rows = embed_images(&imgs, embedder)?;
        features.extend_from_slice(rows.data());
        start += chunk;
    }
    gaussian_stats(&Tensor::from_vec(&[take, embedder.output_dim], features)?)
}

/// Proxy score of the generator against precomputed real-image statistics.
pub fn eval_fid<T: Scalar>(
    g_spec: &ModelSpec,
    g_params: &ParamSet<T>,
    real: &GaussianStats,
    cfg: &TrainConfig,
) -> Result<f64> {
    let fake = generated_feature_stats(
        g_spec,
        g_params,
        cfg.fid_sample_count,
        cfg.seed,
        &cfg.embedder,
    )?;
    frechet_distance(real, &fake)
}

fn tensor_buf<T: Scalar>(t: &Tensor<T>) -> TensorBuf {
    match T::DTYPE {
        Dtype::F32 => TensorBuf::F32(t.cast()),
        Dtype::F64 => TensorBuf::F64(t.cast()),
    }
}

fn tensor_from_buf<T: Scalar>(buf: &TensorBuf) -> Tensor<T> {
    match buf {
        TensorBuf::F32(t) => t.cast(),
        TensorBuf::F64(t) => t.cast(),
    }
}

/// Bundle the whole run state into a checkpoint: both parameter sets
/// (prefixed `g.` / `d.`), optimizer accumulators, step counts, and the
/// live RNG streams.
pub fn run_checkpoint<T: Scalar>(state: &TrainState<T>, cfg: &TrainConfig) -> Result<Checkpoint> {
    let mut params = Vec::new();
    for (prefix, set) in [("g", &state.g_params), ("d", &state.d_params)] {
        for (name, t) in set.iter() {
            params.push(NamedTensor::new(format!("{prefix}.{name}"), tensor_buf(t)));
        }
    }
    let mut opt_state = Vec::new();
    for (prefix, opt) in [("g", &state.g_opt), ("d", &state.d_opt)] {
        for (kind, set) in [("m", &opt.m), ("v", &opt.v)] {
            for (name, t) in set.iter() {
                opt_state.push(NamedTensor::new(
                    format!("{prefix}.opt.{kind}.{name}"),
                    tensor_buf(t),
                ));
            }
        }
        opt_state.push(NamedTensor::new(
            format!("{prefix}.opt.t"),
            TensorBuf::F64(Tensor::from_vec(&[1], vec![opt.t as f64])?),
        ));
    }
    Ok(Checkpoint {
        iteration: state.iteration,
        config_hash: cfg.config_hash(),
        rng_states: vec![
            ("latent".to_string(), state.latent_rng.clone()),
            ("dropout".to_string(), state.dropout_rng.clone()),
        ],
        params,
        opt_state,
    })
}

/// Recover the generator from a checkpoint written by `run_checkpoint`:
/// the architecture is inferred from the `g.`-prefixed tensor shapes.
pub fn generator_from_checkpoint<T: Scalar>(
    ckpt: &Checkpoint,
) -> Result<(ModelSpec, ParamSet<T>)> {
    let entries: Vec<(String, Vec<usize>)> = ckpt
        .params
        .iter()
        .filter_map(|nt| {
            nt.name
                .strip_prefix("g.")
                .map(|n| (n.to_string(), nt.buf.shape().to_vec()))
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::InvalidArgument {
            context: "checkpoint holds no generator tensors".to_string(),
        });
    }
    let spec = infer_generator_spec(&entries)?;
    let mut params = ParamSet::new();
    for nt in &ckpt.params {
        if let Some(name) = nt.name.strip_prefix("g.") {
            params.insert(name.to_string(), tensor_from_buf(&nt.buf))?;
        }
    }
    Ok((spec, params))
}

/// One logged line of training progress.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub iteration: u64,
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub fid: Option<f64>,
}

/// What a finished run hands back.
#[derive(Debug)]
pub struct RunReport {
    pub rows: Vec<MetricsRow>,
    pub final_checkpoint: PathBuf,
    /// Iteration and value of the best score seen, if any was computed.
    pub best: Option<(u64, f64)>,
    pub wall_seconds: f64,
}

fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("iteration,epoch,loss_d,loss_g,fid\n");
    for row in rows {
        let fid = match row.fid {
            Some(f) => format!("{f:.6}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            row.iteration, row.epoch, row.loss_d, row.loss_g, fid
        ));
    }
    out
}

fn write_grid_png<T: Scalar>(
    g_spec: &ModelSpec,
    g_params: &ParamSet<T>,
    seed: u64,
    path: &Path,
) -> Result<()> {
    let mut rng = RngStream::new(seed, STREAM_GRID);
    let tiles = generate_samples(g_spec, g_params, 64, &mut rng)?;
    save_png(path, &emit_grid(&tiles, 8)?)
}

/// Startup probe: losses of the untouched models on the first images in
/// index order, eval mode. Gives the metrics file a baseline row before
/// any update has happened.
fn probe_losses<T: Scalar>(
    state: &TrainState<T>,
    index: &DatasetIndex,
    preload: Option<&[Tensor<T>]>,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let take = cfg.batch_size.min(index.len());
    let ids: Vec<usize> = (0..take).collect();
    let real = assemble_batch(index, preload, &ids)?;
    let mut z_rng = RngStream::new(cfg.seed, STREAM_EVAL);
    let mut scratch = RngStream::new(0, 0);
    let z: Tensor<T> = randn(&[take, cfg.z_dim, 1, 1], &mut z_rng);
    let (fake, _) = forward(&state.g_spec, &state.g_params, &z, Mode::Eval, &mut scratch)?;
    let (score_real, _) = forward(&state.d_spec, &state.d_params, &real, Mode::Eval, &mut scratch)?;
    let (score_fake, _) = forward(&state.d_spec, &state.d_params, &fake, Mode::Eval, &mut scratch)?;
    match cfg.loss {
        LossKind::Dcgan => Ok((
            dcgan_d_loss(&score_real, &score_fake)?,
            dcgan_g_loss(&score_fake)?,
        )),
        LossKind::Wgan => Ok((
            wgan_critic_loss(&score_real, &score_fake)?,
            wgan_g_loss(&score_fake)?,
        )),
    }
}

/// Run a full training job: `epochs` passes over the shuffled dataset,
/// loss logging every iteration, scoring every `fid_every_n_iters` (and at
/// the final iteration), a 64-sample grid per evaluation, a checkpoint per
/// epoch plus rolling best-score and final checkpoints, and `metrics.csv`
/// at the end. Deterministic: a second run with the same config and data
/// produces byte-identical artifacts.
pub fn train<T: Scalar>(cfg: &TrainConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    fs::create_dir_all(&cfg.out_dir).map_err(|source| Error::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;
    let index = DatasetIndex::scan(&cfg.data_dir)?;
    let batches_per_epoch = if cfg.drop_last {
        index.len() / cfg.batch_size
    } else {
        index.len().div_ceil(cfg.batch_size)
    };
    if batches_per_epoch == 0 {
        return Err(Error::InvalidArgument {
            context: format!(
                "dataset of {} images yields no full batch of {} with drop_last",
                index.len(),
                cfg.batch_size
            ),
        });
    }
    let total_iters = (cfg.epochs * batches_per_epoch) as u64;
    let preload: Option<Vec<Tensor<T>>> = if index.len() <= PRELOAD_CAP {
        let mut cache = Vec::with_capacity(index.len());
        for i in 0..index.len() {
            cache.push(load_training_image(index.path(i))?);
        }
        Some(cache)
    } else {
        None
    };
    let mut state = TrainState::<T>::new(cfg)?;
    let real_stats = real_feature_stats(
        &index,
        preload.as_deref(),
        cfg.fid_sample_count,
        &cfg.embedder,
    )?;

    let mut rows: Vec<MetricsRow> = Vec::new();
    let (probe_d, probe_g) = probe_losses(&state, &index, preload.as_deref(), cfg)?;
    let init_fid = eval_fid(&state.g_spec, &state.g_params, &real_stats, cfg)?;
    write_grid_png(
        &state.g_spec,
        &state.g_params,
        cfg.seed,
        &cfg.out_dir.join("grid_000000.png"),
    )?;
    let mut best: (u64, f64) = (0, init_fid);
    run_checkpoint(&state, cfg)?.save(&cfg.out_dir.join("checkpoint_best.ckpt"))?;
    rows.push(MetricsRow {
        iteration: 0,
        epoch: 0,
        loss_d: probe_d,
        loss_g: probe_g,
        fid: Some(init_fid),
    });

    for epoch in 0..cfg.epochs {
        if cfg.lr_halve_every_epochs > 0 {
            let factor = 0.5_f64.powi((epoch / cfg.lr_halve_every_epochs) as i32);
            state.lr_g = cfg.lr_g * factor;
            state.lr_d = cfg.lr_d * factor;
        }
        let mut shuffle_rng = RngStream::new(cfg.seed, STREAM_SHUFFLE_BASE + epoch as u64);
        let batches = make_epoch_batches(&index, cfg.batch_size, &mut shuffle_rng, cfg.drop_last)?;
        for ids in &batches {
            let real = assemble_batch(&index, preload.as_deref(), ids)?;
            let (loss_d, loss_g) = training_step(&mut state, &real, cfg)?;
            state.iteration += 1;
            let iteration = state.iteration;
            let evaluate = iteration % cfg.fid_every_n_iters as u64 == 0 || iteration == total_iters;
            let fid = if evaluate {
                let f = eval_fid(&state.g_spec, &state.g_params, &real_stats, cfg)?;
                write_grid_png(
                    &state.g_spec,
                    &state.g_params,
                    cfg.seed,
                    &cfg.out_dir.join(format!("grid_{iteration:06}.png")),
                )?;
                if f < best.1 {
                    best = (iteration, f);
                    run_checkpoint(&state, cfg)?
                        .save(&cfg.out_dir.join("checkpoint_best.ckpt"))?;
                }
                Some(f)
            } else {
                None
            };
            rows.push(MetricsRow {
                iteration,
                epoch: epoch + 1,
                loss_d,
                loss_g,
                fid,
            });
        }
        run_checkpoint(&state, cfg)?
            .save(&cfg.out_dir.join(format!("checkpoint_epoch_{:03}.ckpt", epoch + 1)))?;
    }
    let final_checkpoint = cfg.out_dir.join("checkpoint_final.ckpt");
    run_checkpoint(&state, cfg)?.save(&final_checkpoint)?;
    let metrics_path = cfg.out_dir.join("metrics.csv");
    fs::write(&metrics_path, metrics_csv(&rows)).map_err(|source| Error::Io {
        path: metrics_path,
        source,
    })?;
    Ok(RunReport {
        rows,
        final_checkpoint,
        best: Some(best),
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_two_tone_dataset;
    use crate::models::ParamSet;

    fn tiny_config(data_dir: &Path, out_dir: &Path) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 2,
            z_dim: 8,
            base_width: 8,
            fid_every_n_iters: 4,
            fid_sample_count: 8,
            data_dir: data_dir.to_path_buf(),
            out_dir: out_dir.to_path_buf(),
            embedder: EmbedderSpec {
                output_dim: 16,
                ..EmbedderSpec::default()
            },
            ..TrainConfig::default()
        }
    }

    fn synthetic_real<T: Scalar>(batch: usize, seed: u64) -> Tensor<T> {
        let mut rng = RngStream::new(seed, 9);
        let mut t: Tensor<T> = randn(&[batch, 3, IMAGE_EXTENT, IMAGE_EXTENT], &mut rng);
        for v in t.data_mut() {
            *v = v.tanh();
        }
        t
    }

    #[test]
    fn regimes_build_and_differ_as_documented() {
        for regime in Regime::ALL {
            let cfg = TrainConfig::regime(regime);
            cfg.validate().unwrap();
            let state = TrainState::<f32>::new(&TrainConfig {
                base_width: 8,
                z_dim: 8,
                ..cfg.clone()
            })
            .unwrap();
            let has_dropout = state
                .d_spec
                .layers
                .iter()
                .any(|l| matches!(l, crate::models::LayerSpec::Dropout { .. }));
            assert_eq!(has_dropout, cfg.dropout_p > 0.0, "{}", regime.name());
            let has_sigmoid = state.d_spec.layers.iter().any(|l| {
                matches!(
                    l,
                    crate::models::LayerSpec::Activation(crate::layers::Activation::Sigmoid)
                )
            });
            assert_eq!(has_sigmoid, cfg.loss == LossKind::Dcgan, "{}", regime.name());
        }
        let boolgan = TrainConfig::regime(Regime::Boolgan);
        assert_eq!(boolgan.lr_g, 7.5e-4);
        assert_eq!(boolgan.lr_d, 7.5e-4);
        assert_eq!(boolgan.model, ModelKind::Boolgan);
        let baseline = TrainConfig::default();
        assert_eq!(baseline.lr_g, 2e-4);
        assert_eq!(baseline.beta1, 0.5);
        assert_eq!(baseline.beta2, 0.999);
        assert_eq!(baseline.batch_size, 128);
        assert_eq!(baseline.epochs, 50);
        assert_eq!(baseline.clip_c, 0.1);
        assert_eq!(DEFAULT_DROPOUT_P, 0.2);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.lr_g = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.loss = LossKind::Wgan;
        cfg.clip_c = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.base_width = 12;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.fid_sample_count = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_hash_tracks_math_but_not_paths() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        b.data_dir = PathBuf::from("other-data");
        assert_eq!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.seed = 1;
        assert_ne!(a.config_hash(), c.config_hash());
        let mut d = a.clone();
        d.lr_g = 3e-4;
        assert_ne!(a.config_hash(), d.config_hash());
    }

    #[test]
    fn step_counts_match_n_critic() {
        let cfg = TrainConfig {
            n_critic: 5,
            batch_size: 2,
            z_dim: 8,
            base_width: 8,
            ..TrainConfig::default()
        };
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        let real = synthetic_real::<f32>(2, 1);
        training_step(&mut state, &real, &cfg).unwrap();
        assert_eq!(state.d_updates, 5);
        assert_eq!(state.g_updates, 1);
        training_step(&mut state, &real, &cfg).unwrap();
        assert_eq!(state.d_updates, 10);
        assert_eq!(state.g_updates, 2);
    }

    #[test]
    fn wgan_clip_holds_after_every_step() {
        let cfg = TrainConfig {
            loss: LossKind::Wgan,
            clip_c: 0.1,
            batch_size: 2,
            z_dim: 8,
            base_width: 8,
            ..TrainConfig::default()
        };
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        for i in 0..6 {
            let real = synthetic_real::<f32>(2, 100 + i);
            training_step(&mut state, &real, &cfg).unwrap();
            for (name, t) in state.d_params.iter() {
                if !ParamSet::<f32>::is_trainable(name) {
                    continue;
                }
                for &v in t.data() {
                    assert!(
                        v.abs() <= 0.1 + 1e-12,
                        "critic parameter {name} left the clip box: {v}"
                    );
                }
            }
        }
    }

    #[test]
    fn initial_dcgan_loss_is_near_balanced_coin() {
        let cfg = TrainConfig {
            batch_size: 128,
            z_dim: 16,
            base_width: 8,
            ..TrainConfig::default()
        };
        let mut state = TrainState::<f64>::new(&cfg).unwrap();
        let real = synthetic_real::<f64>(128, 7);
        let (loss_d, _) = training_step(&mut state, &real, &cfg).unwrap();
        let two_ln2 = 2.0 * std::f64::consts::LN_2;
        assert!(
            (loss_d - two_ln2).abs() < 0.3,
            "initial discriminator loss {loss_d}, expected about {two_ln2}"
        );
    }

    #[test]
    fn training_step_reports_the_failing_substep() {
        let cfg = TrainConfig {
            batch_size: 2,
            z_dim: 8,
            base_width: 8,
            ..TrainConfig::default()
        };
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        state
            .d_params
            .get_mut("l0.weight")
            .unwrap()
            .data_mut()[0] = f32::NAN;
        let real = synthetic_real::<f32>(2, 3);
        match training_step(&mut state, &real, &cfg) {
            Err(Error::Training { context }) => {
                assert!(context.contains("critic update 1"), "context: {context}");
            }
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn frozen_opponent_step_descends_own_loss() {
        // One tiny-lr discriminator update on a fixed batch and fixed fakes
        // must not increase the discriminator loss.
        let cfg = TrainConfig {
            batch_size: 4,
            z_dim: 8,
            base_width: 8,
            lr_d: 1e-6,
            dropout_p: 0.0,
            ..TrainConfig::default()
        };
        let mut state = TrainState::<f64>::new(&cfg).unwrap();
        let real = synthetic_real::<f64>(4, 11);
        let fake = synthetic_real::<f64>(4, 12);
        let mut scratch = RngStream::new(0, 0);
        let loss_of = |params: &ParamSet<f64>, scratch: &mut RngStream| -> f64 {
            let (sr, _) =
                forward(&state.d_spec, params, &real, Mode::Train, scratch).unwrap();
            let (sf, _) =
                forward(&state.d_spec, params, &fake, Mode::Train, scratch).unwrap();
            dcgan_d_loss(&sr, &sf).unwrap()
        };
        let before = loss_of(&state.d_params, &mut scratch);
        let (sr, cr) = forward(
            &state.d_spec,
            &state.d_params,
            &real,
            Mode::Train,
            &mut scratch,
        )
        .unwrap();
        let (sf, cf) = forward(
            &state.d_spec,
            &state.d_params,
            &fake,
            Mode::Train,
            &mut scratch,
        )
        .unwrap();
        let (dr, df) = dcgan_d_loss_grads(&sr, &sf).unwrap();
        let (_, mut grads) = backward(&state.d_spec, &state.d_params, &cr, &dr, true).unwrap();
        let (_, gf) = backward(&state.d_spec, &state.d_params, &cf, &df, true).unwrap();
        add_param_sets(&mut grads, &gf).unwrap();
        adam_step(
            &mut state.d_params,
            &grads,
            &mut state.d_opt,
            1e-6,
            cfg.beta1,
            cfg.beta2,
            OPT_EPS,
        )
        .unwrap();
        let after = loss_of(&state.d_params, &mut scratch);
        assert!(
            after <= before + 1e-9,
            "loss rose from {before} to {after} under a tiny step"
        );
    }

    #[test]
    fn zero_generator_emits_mid_gray() {
        let spec = build_dcgan_generator(8, 8).unwrap();
        let mut params: ParamSet<f32> =
            init_params(&spec, &mut RngStream::new(0, STREAM_G_INIT)).unwrap();
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            if name.ends_with(".running_var") {
                continue;
            }
            for v in params.get_mut(&name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let imgs =
            generate_samples(&spec, &params, 2, &mut RngStream::new(5, STREAM_GRID)).unwrap();
        assert_eq!(imgs.len(), 2);
        for img in &imgs {
            assert_eq!((img.height, img.width), (64, 64));
            assert!(img.data().iter().all(|&v| v == 128));
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = build_dcgan_generator(8, 8).unwrap();
        let params: ParamSet<f32> =
            init_params(&spec, &mut RngStream::new(3, STREAM_G_INIT)).unwrap();
        let a = generate_samples(&spec, &params, 3, &mut RngStream::new(7, STREAM_GRID)).unwrap();
        let b = generate_samples(&spec, &params, 3, &mut RngStream::new(7, STREAM_GRID)).unwrap();
        assert_eq!(a, b);
        let c = generate_samples(&spec, &params, 3, &mut RngStream::new(8, STREAM_GRID)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn checkpoint_round_trips_the_generator() {
        let cfg = TrainConfig {
            batch_size: 2,
            z_dim: 8,
            base_width: 8,
            ..TrainConfig::default()
        };
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        let real = synthetic_real::<f32>(2, 21);
        training_step(&mut state, &real, &cfg).unwrap();
        state.iteration = 1;
        let ckpt = run_checkpoint(&state, &cfg).unwrap();
        assert_eq!(ckpt.iteration, 1);
        let (spec, params) = generator_from_checkpoint::<f32>(&ckpt).unwrap();
        assert_eq!(spec.layers.len(), state.g_spec.layers.len());
        assert_eq!(params.len(), state.g_params.len());
        for (name, t) in state.g_params.iter() {
            let got = params.get(name).unwrap();
            assert_eq!(got.data(), t.data(), "tensor {name} changed in round trip");
        }
        // Streams round-trip too.
        assert_eq!(
            ckpt.rng_state("latent").unwrap().state(),
            state.latent_rng.state()
        );
    }

    #[test]
    fn boolgan_checkpoints_recover_the_wide_head() {
        let cfg = TrainConfig {
            model: ModelKind::Boolgan,
            batch_size: 2,
            z_dim: 8,
            base_width: 8,
            ..TrainConfig::default()
        };
        let state = TrainState::<f32>::new(&cfg).unwrap();
        let ckpt = run_checkpoint(&state, &cfg).unwrap();
        let (spec, _) = generator_from_checkpoint::<f32>(&ckpt).unwrap();
        assert_eq!(spec.layers.len(), state.g_spec.layers.len());
        assert_eq!(spec.output_shape, [3, 64, 64]);
    }

    #[test]
    fn smoke_run_is_deterministic_and_finite() {
        let data = tempfile::tempdir().unwrap();
        write_two_tone_dataset(data.path(), 16, 42).unwrap();
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        let cfg_a = tiny_config(data.path(), out_a.path());
        let cfg_b = tiny_config(data.path(), out_b.path());
        let report_a = train::<f32>(&cfg_a).unwrap();
        let report_b = train::<f32>(&cfg_b).unwrap();

        // 2 epochs x 4 batches, plus the startup probe row.
        assert_eq!(report_a.rows.len(), 9);
        assert_eq!(report_b.rows.len(), 9);
        for (a, b) in report_a.rows.iter().zip(&report_b.rows) {
            assert_eq!(a.loss_d.to_bits(), b.loss_d.to_bits());
            assert_eq!(a.loss_g.to_bits(), b.loss_g.to_bits());
            assert_eq!(a.fid.map(f64::to_bits), b.fid.map(f64::to_bits));
        }
        let mut last_iter = None;
        for row in &report_a.rows {
            assert!(row.loss_d.is_finite() && row.loss_g.is_finite());
            if let Some(f) = row.fid {
                assert!(f.is_finite() && f >= 0.0);
            }
            if let Some(prev) = last_iter {
                assert!(row.iteration > prev, "iterations must increase");
            }
            last_iter = Some(row.iteration);
        }
        // Evaluations at the probe, iteration 4, and iteration 8.
        let eval_iters: Vec<u64> = report_a
            .rows
            .iter()
            .filter(|r| r.fid.is_some())
            .map(|r| r.iteration)
            .collect();
        assert_eq!(eval_iters, vec![0, 4, 8]);

        let artifacts = [
            "metrics.csv",
            "grid_000000.png",
            "grid_000004.png",
            "grid_000008.png",
            "checkpoint_epoch_001.ckpt",
            "checkpoint_epoch_002.ckpt",
            "checkpoint_best.ckpt",
            "checkpoint_final.ckpt",
        ];
        for name in artifacts {
            let a = fs::read(out_a.path().join(name)).unwrap_or_else(|_| panic!("missing {name}"));
            let b = fs::read(out_b.path().join(name)).unwrap();
            assert_eq!(a, b, "artifact {name} differs between identical runs");
        }
        assert!(report_a.best.is_some());
        let metrics = fs::read_to_string(out_a.path().join("metrics.csv")).unwrap();
        assert!(metrics.starts_with("iteration,epoch,loss_d,loss_g,fid\n"));
        assert_eq!(metrics.lines().count(), 10);
    }

    #[test]
    fn generated_stats_are_reproducible() {
        let spec = build_dcgan_generator(8, 8).unwrap();
        let params: ParamSet<f32> =
            init_params(&spec, &mut RngStream::new(1, STREAM_G_INIT)).unwrap();
        let emb = EmbedderSpec {
            output_dim: 8,
            ..EmbedderSpec::default()
        };
        let a = generated_feature_stats(&spec, &params, 6, 3, &emb).unwrap();
        let b = generated_feature_stats(&spec, &params, 6, 3, &emb).unwrap();
        assert_eq!(a.mu.data(), b.mu.data());
        assert_eq!(a.sigma.data(), b.sigma.data());
        let d = frechet_distance(&a, &b).unwrap();
        assert!(d <= 1e-8, "self distance {d}");
    }
}
