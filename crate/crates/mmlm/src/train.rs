//! Staged training: batch sampling, clipped AdamW steps on a warmup + cosine
//! schedule, and the per-step metrics log.
//!
//! Metrics log schema, one line per step, tab-separated `key=value` fields in
//! this order: `step lr ce reg total grad_norm`. `step` is the 1-based step
//! count; the float fields use `{:.9e}`; `grad_norm` is measured before
//! clipping.

use std::fmt;
use std::io::Write;

use mmgen_core::nn::Linear;
use mmgen_core::optim::{clip_global_norm, warmup_cosine};
use mmgen_core::{seeded, AdamW, DetRng, Real};
use mmgen_mmtok::{SequenceSample, Template};
use rand::seq::index;

use crate::config::{Stage, TrainConfig};
use crate::error::LmError;
use crate::model::{Example, Features, Model};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub ce: f64,
    pub reg: f64,
    pub total: f64,
    pub grad_norm: f64,
}

impl fmt::Display for StepMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={}\tlr={:.9e}\tce={:.9e}\treg={:.9e}\ttotal={:.9e}\tgrad_norm={:.9e}",
            self.step, self.lr, self.ce, self.reg, self.total, self.grad_norm
        )
    }
}

impl StepMetrics {
    pub fn parse(line: &str) -> Option<Self> {
        let mut vals = line.split('\t').map(|kv| kv.split_once('=').map(|(_, v)| v));
        let mut next = || vals.next().flatten();
        Some(Self {
            step: next()?.parse().ok()?,
            lr: next()?.parse().ok()?,
            ce: next()?.parse().ok()?,
            reg: next()?.parse().ok()?,
            total: next()?.parse().ok()?,
            grad_norm: next()?.parse().ok()?,
        })
    }
}

/// Rejects samples whose template or masks do not belong to `stage`.
pub fn check_stage(stage: Stage, corpus: &[SequenceSample]) -> Result<(), LmError> {
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    for s in corpus {
        let t = s.meta.template;
        let ok = match stage {
            Stage::One => matches!(t, Template::Pair | Template::Video),
            Stage::Two => matches!(
                t,
                Template::Pair | Template::Interleaved | Template::Video | Template::Grounded
            ),
            Stage::Chat => t == Template::Chat,
            Stage::Gen => t == Template::Gen,
        };
        let mismatch = |detail| LmError::StageMismatch {
            stage,
            template: t,
            detail,
        };
        if !ok {
            return Err(mismatch(""));
        }
        if stage == Stage::One && s.visual_mask.iter().any(|&m| m) {
            return Err(mismatch(" with regression targets"));
        }
    }
    Ok(())
}

pub struct Trainer<T> {
    pub model: Model<T>,
    pub opt: AdamW<T>,
    pub cfg: TrainConfig,
    pub rng: DetRng,
    /// Projection snapshot taken when the stage started; regression targets
    /// are the frozen encoder's features through it.
    pub target_proj: Option<Linear<T>>,
}

impl<T: Real> Trainer<T> {
    /// Starts a stage: freezes the encoder as the stage requires and takes
    /// the target snapshot.
    pub fn new(mut model: Model<T>, cfg: TrainConfig) -> Result<Self, LmError> {
        cfg.validate()?;
        model.encoder.freeze(cfg.stage.freezes_encoder());
        let target_proj = cfg.stage.freezes_encoder().then(|| model.encoder.proj.clone());
        let opt = AdamW::new(&model, cfg.adam);
        Ok(Self {
            model,
            opt,
            cfg,
            rng: seeded(cfg.seed),
            target_proj,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.opt.step
    }

    pub fn is_done(&self) -> bool {
        self.opt.step >= self.cfg.steps
    }

    fn targets(&self, features: &Features<T>) -> Vec<T> {
        let Some(proj) = &self.target_proj else {
            return Vec::new();
        };
        let slots = self.model.slots();
        (0..features.len())
            .flat_map(|i| proj.forward(features.pooled(i), slots))
            .collect()
    }

    /// One optimizer step on a batch drawn from `corpus`.
    pub fn step(&mut self, corpus: &[SequenceSample]) -> Result<StepMetrics, LmError> {
        if corpus.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let picks = index::sample(&mut self.rng, corpus.len(), self.cfg.batch_size.min(corpus.len()));
        let samples: Vec<&SequenceSample> = picks.iter().map(|i| &corpus[i]).collect();
        let features = samples
            .iter()
            .map(|s| self.model.features(&s.images))
            .collect::<Result<Vec<_>, _>>()?;
        let targets: Vec<Vec<T>> = features.iter().map(|f| self.targets(f)).collect();
        let batch: Vec<Example<'_, T>> = samples
            .iter()
            .zip(&features)
            .zip(&targets)
            .map(|((s, f), t)| Example {
                sample: s,
                features: f,
                targets: t,
                pad: 0,
            })
            .collect();
        let mut grad = self.model.zeros_like();
        let loss = self.model.batch_loss(&batch, self.cfg.loss, Some(&mut grad))?;
        let step = self.opt.step + 1;
        if !loss.total.is_finite() {
            return Err(LmError::NonFinite {
                step,
                ce: loss.ce,
                reg: loss.reg,
            });
        }
        let grad_norm = clip_global_norm(&mut grad, self.cfg.clip);
        let lr = warmup_cosine(self.opt.step, self.cfg.steps, self.cfg.warmup_steps(), self.cfg.peak_lr);
        self.opt.update(&mut self.model, &grad, lr)?;
        Ok(StepMetrics {
            step,
            lr,
            ce: loss.ce,
            reg: loss.reg,
            total: loss.total,
            grad_norm,
        })
    }

    /// Runs the remaining steps, writing one log line per step.
    pub fn run(
        &mut self,
        corpus: &[SequenceSample],
        log: &mut dyn Write,
    ) -> Result<Vec<StepMetrics>, LmError> {
        check_stage(self.cfg.stage, corpus)?;
        let mut out = Vec::new();
        while !self.is_done() {
            let m = self.step(corpus)?;
            writeln!(log, "{m}").map_err(|e| LmError::Config(format!("metrics log: {e}")))?;
            out.push(m);
        }
        Ok(out)
    }
}

/// Trains `model` for one full stage.
pub fn run_stage<T: Real>(
    model: Model<T>,
    corpus: &[SequenceSample],
    cfg: TrainConfig,
    log: &mut dyn Write,
) -> Result<(Model<T>, Vec<StepMetrics>), LmError> {
    let mut trainer = Trainer::new(model, cfg)?;
    let metrics = trainer.run(corpus, log)?;
    Ok((trainer.model, metrics))
}
