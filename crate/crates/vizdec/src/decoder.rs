//! Decoder parameters, denoising training with condition dropout, guided
//! sampling, reconstruction, and the encoder-space similarity metric.

use mmgen_core::linalg::cosine;
use mmgen_core::optim::{clip_global_norm, warmup_cosine};
use mmgen_core::{scoped, seeded, AdamW, AdamWConfig, DetRng, Frozen, ImageTensor, ParamSet, Real, Tensor};
use mmgen_viztok::Encoder;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::DecError;
use crate::schedule::DiffusionSchedule;
use crate::unet::{UNet, UNetConfig};

/// Probability that a training sample sees the null condition.
pub const CONDITION_DROP: f64 = 0.10;
pub const GUIDANCE_SCALE: f64 = 3.0;
pub const SAMPLING_STEPS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    pub net: UNet<T>,
    /// Stands in for the `slots × cond_dim` condition when it is dropped.
    pub null_cond: Tensor<T>,
}

impl<T: Real> Decoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: UNetConfig, rng: &mut R) -> Result<Self, DecError> {
        Ok(Self {
            net: UNet::new(cfg, rng)?,
            null_cond: Tensor::randn(&[cfg.slots, cfg.cond_dim], 0.02, rng),
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.net.cfg
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            net: self.net.zeros_like(),
            null_cond: self.null_cond.zeros_like(),
        }
    }

    /// Noise estimate; `None` selects the null condition.
    pub fn predict(&self, x: &[T], t: usize, cond: Option<&[T]>) -> Vec<T> {
        self.net.forward(x, t, cond.unwrap_or(&self.null_cond.data)).0
    }

    /// Mean squared noise-prediction error for one sample. With `grad`,
    /// accumulates `scale ×` its gradient.
    pub fn denoising_loss(
        &self,
        x_t: &[T],
        t: usize,
        cond: Option<&[T]>,
        noise: &[T],
        scale: T,
        grad: Option<&mut Decoder<T>>,
    ) -> f64 {
        let c = cond.unwrap_or(&self.null_cond.data);
        let (eps, cache) = self.net.forward(x_t, t, c);
        let n = T::of_usize(eps.len());
        let diff: Vec<T> = eps.iter().zip(noise).map(|(&e, &z)| e - z).collect();
        let loss = diff.iter().map(|d| d.as_f64() * d.as_f64()).sum::<f64>() / eps.len() as f64;
        if let Some(grad) = grad {
            let two = T::lit(2.0);
            let deps: Vec<T> = diff.iter().map(|&d| two * d * scale / n).collect();
            let dcond = self.net.backward(&cache, c, &deps, &mut grad.net);
            if cond.is_none() {
                grad.null_cond.data.iter_mut().zip(&dcond).for_each(|(g, &d)| *g += d);
            }
        }
        loss
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.net.named(&scoped(prefix, "unet"), out);
        out.push((scoped(prefix, "null_cond"), &self.null_cond));
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.net.named_mut(&scoped(prefix, "unet"), out);
        out.push((scoped(prefix, "null_cond"), &mut self.null_cond));
    }
}

impl<T: Real> ParamSet<T> for Decoder<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.named("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.named_mut("", &mut out);
        out
    }
}

impl<T> Frozen for Decoder<T> {}

/// `uncond + s·(cond − uncond)`.
pub fn cfg_combine<T: Real>(cond: &[T], uncond: &[T], scale: T) -> Result<Vec<T>, DecError> {
    if cond.len() != uncond.len() {
        return Err(DecError::Shape(format!(
            "conditional prediction has {} values, unconditional {}",
            cond.len(),
            uncond.len()
        )));
    }
    // u + (c − u) can round away from c, so the unit scale returns c itself
    if scale == T::one() {
        return Ok(cond.to_vec());
    }
    Ok(cond.iter().zip(uncond).map(|(&c, &u)| u + scale * (c - u)).collect())
}

/// Maps `[0,1]` pixels to the planar `[−1,1]` space the denoiser works in.
pub fn to_model_space(image: &ImageTensor) -> Vec<f32> {
    image.to_planar().iter().map(|&v| 2.0 * v - 1.0).collect()
}

pub fn from_model_space(cfg: &UNetConfig, x: &[f32]) -> ImageTensor {
    let pixels: Vec<f32> = x.iter().map(|&v| (v + 1.0) * 0.5).collect();
    ImageTensor::from_planar(cfg.image_size, cfg.image_size, cfg.channels, &pixels).clamped()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderTrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub clip: f64,
    pub drop_prob: f64,
    /// Scale of the per-image, per-channel constant added to the noise; 0 disables it.
    pub noise_offset: f64,
    pub adam: AdamWConfig,
    pub seed: u64,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            peak_lr: 1e-3,
            warmup_frac: 0.05,
            clip: 1.0,
            drop_prob: CONDITION_DROP,
            noise_offset: 0.1,
            adam: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl DecoderTrainConfig {
    pub fn validate(&self) -> Result<(), DecError> {
        if self.steps == 0 || self.batch_size == 0 || !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(DecError::Config(
                "steps and batch size must be positive and the drop probability in [0,1]".into(),
            ));
        }
        if !(self.peak_lr > 0.0 && self.noise_offset >= 0.0 && (0.0..1.0).contains(&self.warmup_frac)) {
            return Err(DecError::Config("bad learning rate, warmup or noise offset".into()));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.steps as f64 * self.warmup_frac).round() as u64
    }
}

/// The random choices behind one training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub drop_condition: bool,
    pub noise: Vec<f32>,
}

impl NoiseDraw {
    /// Draw order is fixed: timestep, drop flag, per-channel offsets, noise.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        schedule: &DiffusionSchedule,
        cfg: &UNetConfig,
        drop_prob: f64,
        noise_offset: f64,
    ) -> Self {
        let t = rng.random_range(1..=schedule.steps());
        let drop_condition = rng.random_bool(drop_prob);
        let offsets: Vec<f32> = (0..cfg.channels)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                (noise_offset * z) as f32
            })
            .collect();
        let hw = cfg.image_size * cfg.image_size;
        let noise = (0..cfg.pixels())
            .map(|i| {
                let z: f32 = StandardNormal.sample(rng);
                z + offsets[i / hw]
            })
            .collect();
        Self {
            t,
            drop_condition,
            noise,
        }
    }
}

/// A training image in model space with its encoder condition.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderExample {
    pub x0: Vec<f32>,
    pub cond: Vec<f32>,
}

impl DecoderExample {
    pub fn new(image: &ImageTensor, encoder: &Encoder<f32>) -> Result<Self, DecError> {
        Ok(Self {
            x0: to_model_space(image),
            cond: encoder.tokenize_image(image)?.data,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderStep {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub dropped: usize,
    pub grad_norm: f64,
}

impl std::fmt::Display for DecoderStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step={}\tlr={:.9e}\tloss={:.9e}\tdropped={}\tgrad_norm={:.9e}",
            self.step, self.lr, self.loss, self.dropped, self.grad_norm
        )
    }
}

pub struct DecoderTrainer {
    pub decoder: Decoder<f32>,
    pub opt: AdamW<f32>,
    pub cfg: DecoderTrainConfig,
    pub schedule: DiffusionSchedule,
    pub rng: DetRng,
}

impl DecoderTrainer {
    pub fn new(decoder: Decoder<f32>, cfg: DecoderTrainConfig) -> Result<Self, DecError> {
        cfg.validate()?;
        let opt = AdamW::new(&decoder, cfg.adam);
        Ok(Self {
            decoder,
            opt,
            cfg,
            schedule: DiffusionSchedule::standard(),
            rng: seeded(cfg.seed),
        })
    }

    pub fn is_done(&self) -> bool {
        self.opt.step >= self.cfg.steps
    }

    pub fn step(&mut self, data: &[DecoderExample]) -> Result<DecoderStep, DecError> {
        if data.is_empty() {
            return Err(DecError::Config("empty decoder training set".into()));
        }
        let net_cfg = *self.decoder.config();
        let mut grad = self.decoder.zeros_like();
        let scale = 1.0 / self.cfg.batch_size as f32;
        let (mut loss, mut dropped) = (0.0, 0);
        for _ in 0..self.cfg.batch_size {
            let ex = &data[self.rng.random_range(0..data.len())];
            let draw = NoiseDraw::sample(
                &mut self.rng,
                &self.schedule,
                &net_cfg,
                self.cfg.drop_prob,
                self.cfg.noise_offset,
            );
            dropped += usize::from(draw.drop_condition);
            let x_t = self.schedule.add_noise(&ex.x0, draw.t, &draw.noise)?;
            let cond = (!draw.drop_condition).then_some(ex.cond.as_slice());
            loss += self.decoder.denoising_loss(&x_t, draw.t, cond, &draw.noise, scale, Some(&mut grad))
                / self.cfg.batch_size as f64;
        }
        let step = self.opt.step + 1;
        if !loss.is_finite() {
            return Err(DecError::NonFinite(step));
        }
        let grad_norm = clip_global_norm(&mut grad, self.cfg.clip);
        let lr = warmup_cosine(self.opt.step, self.cfg.steps, self.cfg.warmup_steps(), self.cfg.peak_lr);
        self.opt.update(&mut self.decoder, &grad, lr)?;
        Ok(DecoderStep {
            step,
            lr,
            loss,
            dropped,
            grad_norm,
        })
    }

    pub fn run(
        &mut self,
        data: &[DecoderExample],
        mut log: impl FnMut(&DecoderStep),
    ) -> Result<(), DecError> {
        while !self.is_done() {
            let m = self.step(data)?;
            log(&m);
        }
        Ok(())
    }
}

/// Trains a fresh decoder to invert a frozen encoder on `images`.
pub fn train_decoder(
    images: &[ImageTensor],
    encoder: &Encoder<f32>,
    net: UNetConfig,
    cfg: DecoderTrainConfig,
    log: impl FnMut(&DecoderStep),
) -> Result<Decoder<f32>, DecError> {
    if !encoder.is_frozen() {
        return Err(DecError::EncoderNotFrozen);
    }
    let data = images
        .iter()
        .map(|im| DecoderExample::new(im, encoder))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = seeded(mmgen_core::derive_seed(cfg.seed, 0xDEC0));
    let mut trainer = DecoderTrainer::new(Decoder::new(net, &mut rng)?, cfg)?;
    trainer.run(&data, log)?;
    Ok(trainer.decoder)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    /// DDPM posterior sampling with fresh noise each step.
    Ancestral,
    /// Noise-free (η = 0) updates; only the starting noise is random.
    Deterministic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance: f64,
    pub kind: SamplerKind,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: SAMPLING_STEPS,
            guidance: GUIDANCE_SCALE,
            kind: SamplerKind::Ancestral,
            seed: 0,
        }
    }
}

impl Decoder<f32> {
    /// Guided reverse diffusion from pure noise to an image.
    pub fn sample(
        &self,
        embeddings: &[f32],
        schedule: &DiffusionSchedule,
        sampler: &SamplerConfig,
    ) -> Result<ImageTensor, DecError> {
        let cfg = *self.config();
        if embeddings.len() != cfg.slots * cfg.cond_dim {
            return Err(DecError::Shape(format!(
                "expected {}×{} condition values, got {}",
                cfg.slots,
                cfg.cond_dim,
                embeddings.len()
            )));
        }
        let ts = schedule.respaced(sampler.steps)?;
        let mut rng = seeded(sampler.seed);
        let normal = |n: usize, rng: &mut DetRng| -> Vec<f32> {
            (0..n).map(|_| StandardNormal.sample(rng)).collect()
        };
        let mut x = normal(cfg.pixels(), &mut rng);
        let s = sampler.guidance as f32;
        for (i, &t) in ts.iter().enumerate() {
            let uncond = self.predict(&x, t, None);
            let eps = if s == 0.0 {
                uncond
            } else {
                cfg_combine(&self.predict(&x, t, Some(embeddings)), &uncond, s)?
            };
            let ab = schedule.alpha_bar(t)?;
            let ab_prev = match ts.get(i + 1) {
                Some(&tp) => schedule.alpha_bar(tp)?,
                None => 1.0,
            };
            let (sa, sb) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
            let x0: Vec<f32> = x
                .iter()
                .zip(&eps)
                .map(|(&xv, &e)| ((xv - sb * e) / sa).clamp(-1.0, 1.0))
                .collect();
            x = match sampler.kind {
                SamplerKind::Deterministic => {
                    let (pa, pb) = (ab_prev.sqrt() as f32, (1.0 - ab_prev).sqrt() as f32);
                    x.iter()
                        .zip(&x0)
                        .map(|(&xv, &x0v)| {
                            let e = (xv - sa * x0v) / sb;
                            pa * x0v + pb * e
                        })
                        .collect()
                }
                SamplerKind::Ancestral => {
                    let beta = 1.0 - ab / ab_prev;
                    let c0 = (ab_prev.sqrt() * beta / (1.0 - ab)) as f32;
                    let ct = ((1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab)) as f32;
                    let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt() as f32;
                    let z = if sigma > 0.0 {
                        normal(cfg.pixels(), &mut rng)
                    } else {
                        vec![0.0; cfg.pixels()]
                    };
                    x.iter()
                        .zip(&x0)
                        .zip(&z)
                        .map(|((&xv, &x0v), &zv)| c0 * x0v + ct * xv + sigma * zv)
                        .collect()
                }
            };
        }
        Ok(from_model_space(&cfg, &x))
    }

    /// Tokenizes `image` with the encoder and decodes it back.
    pub fn reconstruct(
        &self,
        image: &ImageTensor,
        encoder: &Encoder<f32>,
        schedule: &DiffusionSchedule,
        sampler: &SamplerConfig,
    ) -> Result<ImageTensor, DecError> {
        let cond = encoder.tokenize_image(image)?;
        self.sample(&cond.data, schedule, sampler)
    }
}

/// Cosine between the encoder's mean-pooled embeddings of `a` and `b`.
pub fn similarity(a: &ImageTensor, b: &ImageTensor, encoder: &Encoder<f32>) -> Result<f64, DecError> {
    if !a.same_shape(b) {
        return Err(DecError::Shape("images differ in shape".into()));
    }
    cosine(&encoder.mean_embedding(a)?, &encoder.mean_embedding(b)?).ok_or(DecError::ZeroNorm)
}
