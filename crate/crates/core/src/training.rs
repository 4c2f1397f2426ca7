//! Adversarial training: losses, augmentation, the optimization loop, checkpoints and metrics.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sgg_autodiff::{grad, no_grad, Float, Tensor, Var};

use crate::batch::SurfaceBatch;
use crate::checkpoint::{Checkpoint, Counters, Record};
use crate::dataset::Dataset;
use crate::discriminator::{surface_loss_var, Discriminator, DiscriminatorConfig, SMOOTH_L1_BETA};
use crate::error::{invalid, Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::image::ImageRgb;
use crate::mapping::{body_mean, OmegaMean};
use crate::model::SurfaceGan;
use crate::nn::{Bound, ParamSet};
use crate::optim::{ema_update, Adam};
use crate::surface::{discretize, SurfaceAnnotation, VertexTable};
use crate::transform::{transform_annotation, Border, Spatial};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub hflip: bool,
    /// Integer translations up to 1/8 of each dimension, edges replicated.
    pub translate: bool,
    /// Brightness and contrast jitter of the image only.
    pub color: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { hflip: true, translate: true, color: true }
    }
}

pub fn hflip(ann: &SurfaceAnnotation) -> Result<SurfaceAnnotation> {
    Ok(transform_annotation(ann, Spatial::Hflip, Border::Replicate)?.ann)
}

pub fn translate(ann: &SurfaceAnnotation, dy: i64, dx: i64) -> Result<SurfaceAnnotation> {
    Ok(transform_annotation(ann, Spatial::Translate { dy, dx }, Border::Replicate)?.ann)
}

pub fn color_jitter<R: Rng + ?Sized>(image: &ImageRgb, rng: &mut R) -> ImageRgb {
    let brightness = rng.random_range(-0.2f32..0.2);
    let contrast = rng.random_range(0.8f32..1.2);
    let mean = image.data().iter().sum::<f32>() / image.data().len().max(1) as f32;
    let data = image.data().iter().map(|&v| ((v - mean) * contrast + mean + brightness).clamp(-1.0, 1.0)).collect();
    ImageRgb::new(image.height(), image.width(), data).expect("same shape")
}

/// Random joint flip/translation of all planes plus image-only color jitter.
pub fn augment<R: Rng + ?Sized>(ann: &SurfaceAnnotation, cfg: &AugmentConfig, rng: &mut R) -> Result<SurfaceAnnotation> {
    let mut out = ann.clone();
    if cfg.hflip && rng.random_bool(0.5) {
        out = hflip(&out)?;
    }
    if cfg.translate {
        let my = (ann.height() / 8) as i64;
        let mx = (ann.width() / 8) as i64;
        let (dy, dx) = (rng.random_range(-my..=my), rng.random_range(-mx..=mx));
        if (dy, dx) != (0, 0) {
            out = translate(&out, dy, dx)?;
        }
    }
    if cfg.color {
        out = out.with_image(color_jitter(out.image(), rng))?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub lambda_cse: f64,
    pub r1_gamma: f64,
    /// The r1 penalty is applied every `r1_interval` steps, scaled by the interval.
    pub r1_interval: u64,
    pub epsilon_weight: f64,
    pub smooth_l1_beta: f64,
    pub augment: AugmentConfig,
    pub ema_decay: Option<f64>,
    pub omega_mean_decay: f64,
    pub seed: u64,
    pub checkpoint_every: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_g: 2e-3,
            lr_d: 2e-3,
            beta1: 0.0,
            beta2: 0.99,
            adam_eps: 1e-8,
            batch_size: 8,
            total_steps: 5000,
            lambda_cse: 1.0,
            r1_gamma: 0.1,
            r1_interval: 16,
            epsilon_weight: 1e-3,
            smooth_l1_beta: SMOOTH_L1_BETA,
            augment: AugmentConfig::default(),
            ema_decay: Some(0.999),
            omega_mean_decay: 0.995,
            seed: 0,
            checkpoint_every: Some(500),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr_g", self.lr_g), ("lr_d", self.lr_d), ("adam_eps", self.adam_eps), ("smooth_l1_beta", self.smooth_l1_beta)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid!("{name} must be positive, got {v}"));
            }
        }
        let weights = [("lambda_cse", self.lambda_cse), ("r1_gamma", self.r1_gamma), ("epsilon_weight", self.epsilon_weight)];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("omega_mean_decay", self.omega_mean_decay)] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid!("{name} must be in [0, 1), got {v}"));
            }
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(invalid!("ema_decay must be in [0, 1), got {d}"));
            }
        }
        if self.batch_size == 0 || self.r1_interval == 0 {
            return Err(invalid!("batch_size and r1_interval must be at least 1"));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_cse: self.lambda_cse,
            epsilon_weight: self.epsilon_weight,
            r1_gamma: self.r1_gamma,
            r1_scale: self.r1_interval as f64,
            beta: self.smooth_l1_beta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_cse: f64,
    pub epsilon_weight: f64,
    pub r1_gamma: f64,
    /// Multiplier of the r1 term on steps where it is applied.
    pub r1_scale: f64,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DLossTerms {
    pub adv_real: f64,
    pub adv_fake: f64,
    pub epsilon: f64,
    pub cse: f64,
    pub r1: f64,
    pub total: f64,
}

impl DLossTerms {
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("d_adv_real", self.adv_real),
            ("d_adv_fake", self.adv_fake),
            ("d_epsilon", self.epsilon),
            ("d_cse", self.cse),
            ("d_r1", self.r1),
            ("d_total", self.total),
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GLossTerms {
    pub adv: f64,
    pub cse: f64,
    pub total: f64,
}

impl GLossTerms {
    pub fn named(&self) -> [(&'static str, f64); 3] {
        [("g_adv", self.adv), ("g_cse", self.cse), ("g_total", self.total)]
    }
}

fn describe(terms: &[(&str, f64)]) -> String {
    terms.iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join(" ")
}

fn scalar<T: Float>(v: &Var<T>) -> f64 {
    v.item().to_f64().unwrap()
}

/// Batch mean of Σ (M ⊙ g)², with `grad` [N, 3, H, W] and KNOWN mask `known` [N, 1, H, W].
pub fn masked_r1_penalty<T: Float>(grad: &Var<T>, known: &Tensor<T>) -> Var<T> {
    let n = grad.shape()[0];
    grad.mul_const(known).square().sum().scale(1.0 / n as f64)
}

/// Discriminator loss on a real batch and generated images `fake` [N, 3, H, W].
pub fn d_loss<T: Float>(
    d: &Discriminator,
    dp: &Bound<T>,
    real: &SurfaceBatch<T>,
    fake: &Var<T>,
    w: &LossWeights,
    apply_r1: bool,
) -> Result<(Var<T>, DLossTerms)> {
    let real_image = if apply_r1 { Var::leaf(real.image.clone()) } else { Var::constant(real.image.clone()) };
    let out_real = d.forward(dp, &real_image, &real.mask_planes)?;
    let out_fake = d.forward(dp, fake, &real.mask_planes)?;
    let adv_real = out_real.logit.neg().softplus().mean();
    let adv_fake = out_fake.logit.softplus().mean();
    let epsilon = out_real.logit.square().mean().scale(w.epsilon_weight);
    let cse = surface_loss_var(&out_real.e_hat, &real.embeddings, &real.body, w.beta).0.scale(w.lambda_cse);
    let mut total = adv_real.add(&adv_fake).add(&epsilon).add(&cse);
    let mut r1_value = 0.0;
    if apply_r1 && w.r1_gamma > 0.0 {
        let g = grad(&out_real.logit.sum(), &[&real_image], true).remove(0);
        let r1 = masked_r1_penalty(&g, &real.known).scale(0.5 * w.r1_gamma * w.r1_scale);
        r1_value = scalar(&r1);
        total = total.add(&r1);
    }
    let terms = DLossTerms {
        adv_real: scalar(&adv_real),
        adv_fake: scalar(&adv_fake),
        epsilon: scalar(&epsilon),
        cse: scalar(&cse),
        r1: r1_value,
        total: scalar(&total),
    };
    Ok((total, terms))
}

/// Non-saturating generator loss plus the surface regression on the generated images.
pub fn g_loss<T: Float>(
    d: &Discriminator,
    dp: &Bound<T>,
    batch: &SurfaceBatch<T>,
    fake: &Var<T>,
    w: &LossWeights,
) -> Result<(Var<T>, GLossTerms)> {
    let out = d.forward(dp, fake, &batch.mask_planes)?;
    let adv = out.logit.neg().softplus().mean();
    let cse = surface_loss_var(&out.e_hat, &batch.embeddings, &batch.body, w.beta).0.scale(w.lambda_cse);
    let total = adv.add(&cse);
    let terms = GLossTerms { adv: scalar(&adv), cse: scalar(&cse), total: scalar(&total) };
    Ok((total, terms))
}

/// Append-only metrics log, one `step term value` record per line.
pub struct MetricsLog {
    writer: BufWriter<File>,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { writer: BufWriter::new(file) })
    }

    pub fn record(&mut self, step: u64, term: &str, value: f64) -> std::io::Result<()> {
        writeln!(self.writer, "{step} {term} {value}")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.writer.flush()
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub g_params: ParamSet<f32>,
    pub d_params: ParamSet<f32>,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub ema: Option<ParamSet<f32>>,
    pub omega_mean: OmegaMean,
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub d: DLossTerms,
    pub g: GLossTerms,
}

const EPOCH_STREAM_SALT: u64 = 0x5eed_0f_e90c;

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Deterministic sample order: one seeded permutation per epoch.
pub fn epoch_permutation(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EPOCH_STREAM_SALT);
    rng.set_stream(epoch);
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Replaces the embeddings of `ann` by their nearest table rows.
pub fn discretize_annotation(ann: &SurfaceAnnotation, table: &VertexTable) -> Result<SurfaceAnnotation> {
    ann.with_embeddings(discretize(ann.embeddings(), table)?)
}

fn randn_tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<f32> {
    Tensor::randn(shape, rng)
}

pub struct Trainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub table: VertexTable,
    pub config: TrainConfig,
    pub state: TrainState,
    epoch_cache: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(g_config: GeneratorConfig, d_config: DiscriminatorConfig, config: TrainConfig, table: VertexTable) -> Result<Self> {
        config.validate()?;
        if (g_config.height, g_config.width) != (d_config.height, d_config.width) {
            return Err(invalid!("generator and discriminator resolutions differ"));
        }
        if g_config.mapping.embed_dim != table.dim() || d_config.embed_dim != table.dim() {
            return Err(invalid!("embedding width differs from the vertex table's {}", table.dim()));
        }
        let omega_dim = g_config.mapping.out_dim;
        let (generator, g_params) = Generator::new::<f32>(g_config, config.seed)?;
        let (discriminator, d_params) = Discriminator::new::<f32>(d_config, config.seed.wrapping_add(1))?;
        let opt_g = Adam::new(&g_params, config.lr_g, config.beta1, config.beta2, config.adam_eps);
        let opt_d = Adam::new(&d_params, config.lr_d, config.beta1, config.beta2, config.adam_eps);
        let ema = config.ema_decay.map(|_| g_params.clone());
        let omega_mean = OmegaMean::new(omega_dim, config.omega_mean_decay);
        let state = TrainState { g_params, d_params, opt_g, opt_d, ema, omega_mean, step: 0 };
        Ok(Self { generator, discriminator, table, config, state, epoch_cache: None })
    }

    fn sample_indices(&mut self, len: usize) -> Vec<usize> {
        let b = self.config.batch_size as u64;
        (0..b)
            .map(|i| {
                let pos = self.state.step * b + i;
                let epoch = pos / len as u64;
                if self.epoch_cache.as_ref().map(|c| c.0) != Some(epoch) {
                    self.epoch_cache = Some((epoch, epoch_permutation(self.config.seed, epoch, len)));
                }
                self.epoch_cache.as_ref().unwrap().1[(pos % len as u64) as usize]
            })
            .collect()
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self, data: &dyn Dataset) -> Result<StepReport> {
        if data.is_empty() {
            return Err(invalid!("training dataset is empty"));
        }
        let step = self.state.step;
        let mut rng = step_rng(self.config.seed, step);
        let mut anns = Vec::with_capacity(self.config.batch_size);
        for i in self.sample_indices(data.len()) {
            let ann = discretize_annotation(&data.get(i)?, &self.table)?;
            anns.push(augment(&ann, &self.config.augment, &mut rng)?);
        }
        let batch = SurfaceBatch::<f32>::new(&anns, Some(&self.table))?;
        let weights = self.config.loss_weights();
        let z_shape = [batch.n, self.generator.config().z_dim()];

        // discriminator
        let z = Var::constant(randn_tensor(&z_shape, &mut rng));
        let fake = no_grad(|| {
            let gp = self.state.g_params.bind(false);
            self.generator.forward(&gp, &batch, &z, Some(&self.table), None).map(|o| o.composite)
        })?;
        let dp = self.state.d_params.bind(true);
        let apply_r1 = step % self.config.r1_interval == 0;
        let (loss, d_terms) = d_loss(&self.discriminator, &dp, &batch, &fake, &weights, apply_r1)?;
        if !d_terms.total.is_finite() {
            return Err(Error::Divergence { step, terms: describe(&d_terms.named()) });
        }
        let grads = dp.grads(&loss);
        drop(loss);
        drop(dp);
        self.state.opt_d.step(&mut self.state.d_params, &grads);

        // generator
        let z = Var::constant(randn_tensor(&z_shape, &mut rng));
        let gp = self.state.g_params.bind(true);
        let dp = self.state.d_params.bind(false);
        let out = self.generator.forward(&gp, &batch, &z, Some(&self.table), None)?;
        let (loss, g_terms) = g_loss(&self.discriminator, &dp, &batch, &out.composite, &weights)?;
        if !g_terms.total.is_finite() {
            return Err(Error::Divergence { step, terms: describe(&g_terms.named()) });
        }
        let grads = gp.grads(&loss);
        self.state.opt_g.step(&mut self.state.g_params, &grads);
        if let Some(field) = &out.field {
            if let Some(mean) = body_mean(field.value(), &batch.body) {
                self.state.omega_mean.update(&mean);
            }
        }
        if let (Some(ema), Some(decay)) = (self.state.ema.as_mut(), self.config.ema_decay) {
            ema_update(ema, &self.state.g_params, decay);
        }
        if !self.state.g_params.is_finite() || !self.state.d_params.is_finite() {
            let mut terms: Vec<(&str, f64)> = d_terms.named().to_vec();
            terms.extend(g_terms.named());
            return Err(Error::Divergence { step, terms: format!("non-finite parameters after update; {}", describe(&terms)) });
        }
        self.state.step += 1;
        Ok(StepReport { step, d: d_terms, g: g_terms })
    }

    /// Runs until `total_steps`, logging every step and checkpointing periodically.
    pub fn train(
        &mut self,
        data: &dyn Dataset,
        mut log: Option<&mut MetricsLog>,
        checkpoint_path: Option<&Path>,
        mut on_step: impl FnMut(&Self, &StepReport) -> bool,
    ) -> Result<()> {
        while self.state.step < self.config.total_steps {
            let report = self.step(data)?;
            if let Some(log) = log.as_deref_mut() {
                for (name, v) in report.d.named().iter().chain(report.g.named().iter()) {
                    log.record(report.step, name, *v).map_err(|e| Error::io("metrics log", e))?;
                }
            }
            let stop = !on_step(self, &report);
            let due = self.config.checkpoint_every.is_some_and(|n| n > 0 && self.state.step % n == 0);
            if let Some(path) = checkpoint_path {
                if due || stop || self.state.step == self.config.total_steps {
                    self.to_checkpoint().save(path)?;
                }
            }
            if stop {
                break;
            }
        }
        if let Some(log) = log {
            log.flush().map_err(|e| Error::io("metrics log", e))?;
        }
        Ok(())
    }

    /// Inference model from the EMA parameters when available.
    pub fn model(&self) -> SurfaceGan {
        SurfaceGan {
            generator: self.generator.clone(),
            params: self.state.ema.clone().unwrap_or_else(|| self.state.g_params.clone()),
            table: self.table.clone(),
            omega_mean: self.state.omega_mean.clone(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let s = &self.state;
        let mut records = Vec::new();
        let mut push_set = |prefix: &str, set: &ParamSet<f32>| {
            for (name, t) in set.iter() {
                records.push(Record { name: format!("{prefix}{name}"), shape: t.shape().to_vec(), data: t.data().to_vec() });
            }
        };
        push_set("g.", &s.g_params);
        push_set("d.", &s.d_params);
        if let Some(ema) = &s.ema {
            push_set("ema.", ema);
        }
        for (prefix, opt, set) in [("opt_g", &s.opt_g, &s.g_params), ("opt_d", &s.opt_d, &s.d_params)] {
            for ((name, _), (m, v)) in set.iter().zip(opt.m.iter().zip(&opt.v)) {
                records.push(Record { name: format!("{prefix}.m.{name}"), shape: m.shape().to_vec(), data: m.data().to_vec() });
                records.push(Record { name: format!("{prefix}.v.{name}"), shape: v.shape().to_vec(), data: v.data().to_vec() });
            }
        }
        records.push(Record { name: "omega_mean".into(), shape: vec![s.omega_mean.mean.len()], data: s.omega_mean.mean.clone() });
        records.push(Record {
            name: "vertex_table".into(),
            shape: vec![self.table.len(), self.table.dim()],
            data: self.table.as_slice().to_vec(),
        });
        let counters = Counters { adam_g_steps: s.opt_g.t, adam_d_steps: s.opt_d.t, omega_mean_updates: s.omega_mean.updates };
        Checkpoint {
            config: json!({
                "generator": self.generator.config(),
                "discriminator": self.discriminator.config(),
                "train": self.config,
                "counters": counters,
            }),
            step: s.step,
            records,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let g_config: GeneratorConfig = ckpt.config_as("generator")?;
        let d_config: DiscriminatorConfig = ckpt.config_as("discriminator")?;
        let config: TrainConfig = ckpt.config_as("train")?;
        let counters: Counters = ckpt.config_as("counters")?;
        let table = load_table_record(ckpt)?;
        let mut t = Self::new(g_config, d_config, config, table)?;
        let s = &mut t.state;
        restore_set(ckpt, "g.", &mut s.g_params)?;
        restore_set(ckpt, "d.", &mut s.d_params)?;
        if let Some(ema) = s.ema.as_mut() {
            restore_set(ckpt, "ema.", ema)?;
        }
        for (prefix, opt, set) in [("opt_g", &mut s.opt_g, &s.g_params), ("opt_d", &mut s.opt_d, &s.d_params)] {
            for (i, (name, _)) in set.iter().enumerate() {
                restore_tensor(ckpt, &format!("{prefix}.m.{name}"), &mut opt.m[i])?;
                restore_tensor(ckpt, &format!("{prefix}.v.{name}"), &mut opt.v[i])?;
            }
        }
        s.opt_g.t = counters.adam_g_steps;
        s.opt_d.t = counters.adam_d_steps;
        s.omega_mean.mean = load_omega_mean(ckpt, s.omega_mean.mean.len())?;
        s.omega_mean.updates = counters.omega_mean_updates;
        s.step = ckpt.step;
        Ok(t)
    }
}

pub(crate) fn load_table_record(ckpt: &Checkpoint) -> Result<VertexTable> {
    let r = ckpt.require("vertex_table")?;
    if r.shape.len() != 2 {
        return Err(Error::Checkpoint(format!("vertex_table has shape {:?}", r.shape)));
    }
    VertexTable::new(r.shape[0], r.shape[1], r.data.clone()).map_err(|e| Error::Checkpoint(format!("vertex_table: {e}")))
}

pub(crate) fn load_omega_mean(ckpt: &Checkpoint, dim: usize) -> Result<Vec<f32>> {
    let r = ckpt.require("omega_mean")?;
    if r.shape != [dim] {
        return Err(Error::Checkpoint(format!("omega_mean has shape {:?}, expected [{dim}]", r.shape)));
    }
    Ok(r.data.clone())
}

fn restore_tensor(ckpt: &Checkpoint, name: &str, dst: &mut Tensor<f32>) -> Result<()> {
    let r = ckpt.require(name)?;
    if r.shape != dst.shape() {
        return Err(Error::Checkpoint(format!("{name} has shape {:?}, model expects {:?}", r.shape, dst.shape())));
    }
    dst.data_mut().copy_from_slice(&r.data);
    Ok(())
}

pub(crate) fn restore_set(ckpt: &Checkpoint, prefix: &str, set: &mut ParamSet<f32>) -> Result<()> {
    let ids: Vec<_> = set.ids().collect();
    for id in ids {
        let name = format!("{prefix}{}", set.name(id));
        restore_tensor(ckpt, &name, set.get_mut(id))?;
    }
    Ok(())
}
