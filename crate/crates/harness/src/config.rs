//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown keys and unparsable values are errors. [`Config::to_text`]
//! writes every key, so a snapshot parses back to the same configuration.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use mmgen_core::AdamWConfig;
use mmgen_mmlm::{LmConfig, LossConfig, RegressionKind, Stage, TrainConfig};
use mmgen_vizdec::{DecoderTrainConfig, SamplerConfig, SamplerKind, UNetConfig};
use mmgen_viztok::VizConfig;

use crate::error::HarnessError;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    // corpus
    pub pairs: usize,
    pub qa: usize,
    pub episodes: usize,
    pub min_shots: usize,
    pub max_shots: usize,
    pub relabel_prob: f64,
    pub interleaved: usize,
    pub grounded: usize,
    pub gen: usize,
    pub chat: usize,
    pub eval_pool: usize,
    pub eval_test: usize,
    // encoder
    pub image_size: usize,
    pub patch: usize,
    pub enc_dim: usize,
    pub grid: usize,
    pub dim: usize,
    pub enc_blocks: usize,
    pub enc_heads: usize,
    // language model
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub mlp_mult: usize,
    // training
    pub stage1_steps: u64,
    pub stage2_steps: u64,
    pub chat_steps: u64,
    pub gen_steps: u64,
    pub entity_drop: f64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub clip: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub regression: RegressionKind,
    // decoder
    pub dec_base: usize,
    pub dec_mid: usize,
    pub dec_cond_channels: usize,
    pub dec_time_dim: usize,
    pub dec_heads: usize,
    pub dec_steps: u64,
    pub dec_batch: usize,
    pub dec_lr: f64,
    pub drop_prob: f64,
    pub noise_offset: f64,
    pub sample_steps: usize,
    pub guidance: f64,
    pub sampler: SamplerKind,
    // evaluation
    pub max_new: usize,
}

impl Default for Config {
    fn default() -> Self {
        let viz = VizConfig::default();
        let lm = LmConfig::default();
        let train = TrainConfig::default();
        let unet = UNetConfig::default();
        let dec = DecoderTrainConfig::default();
        let sampler = SamplerConfig::default();
        Self {
            seed: 0,
            pairs: 512,
            qa: 512,
            episodes: 1024,
            min_shots: 1,
            max_shots: 4,
            relabel_prob: 0.5,
            interleaved: 128,
            grounded: 128,
            gen: 128,
            chat: 128,
            eval_pool: 256,
            eval_test: 64,
            image_size: viz.image_size,
            patch: viz.patch,
            enc_dim: viz.enc_dim,
            grid: viz.grid,
            dim: viz.model_dim,
            enc_blocks: viz.blocks,
            enc_heads: viz.heads,
            layers: lm.layers,
            heads: lm.heads,
            max_len: lm.max_len,
            mlp_mult: lm.mlp_mult,
            stage1_steps: 300,
            stage2_steps: 600,
            chat_steps: 200,
            gen_steps: 200,
            entity_drop: 0.1,
            batch_size: train.batch_size,
            peak_lr: train.peak_lr,
            warmup_frac: train.warmup_frac,
            clip: train.clip,
            weight_decay: train.adam.weight_decay,
            lambda: train.loss.lambda,
            regression: train.loss.kind,
            dec_base: unet.base,
            dec_mid: unet.mid,
            dec_cond_channels: unet.cond_channels,
            dec_time_dim: unet.time_dim,
            dec_heads: unet.heads,
            dec_steps: dec.steps,
            dec_batch: dec.batch_size,
            dec_lr: dec.peak_lr,
            drop_prob: dec.drop_prob,
            noise_offset: dec.noise_offset,
            sample_steps: sampler.steps,
            guidance: sampler.guidance,
            sampler: sampler.kind,
            max_new: 4,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value.parse().map_err(|_| HarnessError::Config(format!("bad value `{value}` for `{key}`")))
}

fn regression_name(kind: RegressionKind) -> &'static str {
    match kind {
        RegressionKind::Mse => "mse",
        RegressionKind::Cosine => "cosine",
    }
}

fn sampler_name(kind: SamplerKind) -> &'static str {
    match kind {
        SamplerKind::Ancestral => "ancestral",
        SamplerKind::Deterministic => "deterministic",
    }
}

macro_rules! keys {
    ($($name:ident),* $(,)?) => {
        const PLAIN_KEYS: &[&str] = &[$(stringify!($name)),*];

        impl Config {
            fn set_plain(&mut self, key: &str, value: &str) -> Result<bool, HarnessError> {
                match key {
                    $(stringify!($name) => self.$name = parse(key, value)?,)*
                    _ => return Ok(false),
                }
                Ok(true)
            }

            fn plain_entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($name), display(&self.$name))),*]
            }
        }
    };
}

fn display<T: Display>(v: &T) -> String {
    v.to_string()
}

keys!(
    seed, pairs, qa, episodes, min_shots, max_shots, relabel_prob, interleaved, grounded, gen, chat, eval_pool, eval_test,
    image_size, patch, enc_dim, grid, dim, enc_blocks, enc_heads, layers, heads, max_len, mlp_mult,
    stage1_steps, stage2_steps, chat_steps, gen_steps, entity_drop, batch_size, peak_lr, warmup_frac, clip,
    weight_decay, lambda, dec_base, dec_mid, dec_cond_channels, dec_time_dim, dec_heads, dec_steps,
    dec_batch, dec_lr, drop_prob, noise_offset, sample_steps, guidance, max_new,
);

impl Config {
    /// Every recognised key, in snapshot order.
    pub fn keys() -> Vec<&'static str> {
        let mut keys = PLAIN_KEYS.to_vec();
        keys.extend(["regression", "sampler"]);
        keys
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        if self.set_plain(key, value)? {
            return Ok(());
        }
        match key {
            "regression" => {
                self.regression = value.parse().map_err(|_| {
                    HarnessError::Config(format!("bad value `{value}` for `regression`"))
                })?
            }
            "sampler" => {
                self.sampler = match value {
                    "ancestral" => SamplerKind::Ancestral,
                    "deterministic" => SamplerKind::Deterministic,
                    _ => return Err(HarnessError::Config(format!("bad value `{value}` for `sampler`"))),
                }
            }
            _ => return Err(HarnessError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `text` on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| HarnessError::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut entries = self.plain_entries();
        entries.push(("regression", regression_name(self.regression).to_string()));
        entries.push(("sampler", sampler_name(self.sampler).to_string()));
        entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.viz().validate()?;
        if self.eval_pool == 0 || self.eval_test == 0 || self.pairs == 0 {
            return Err(HarnessError::Config("pairs and eval splits must be non-empty".into()));
        }
        if self.min_shots > self.max_shots {
            return Err(HarnessError::Config("min_shots exceeds max_shots".into()));
        }
        for (key, p) in [("relabel_prob", self.relabel_prob), ("entity_drop", self.entity_drop), ("drop_prob", self.drop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(HarnessError::Config(format!("`{key}` must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn viz(&self) -> VizConfig {
        VizConfig {
            image_size: self.image_size,
            channels: 3,
            patch: self.patch,
            enc_dim: self.enc_dim,
            grid: self.grid,
            model_dim: self.dim,
            blocks: self.enc_blocks,
            heads: self.enc_heads,
        }
    }

    pub fn lm(&self, vocab_size: usize) -> LmConfig {
        LmConfig {
            vocab_size,
            dim: self.dim,
            layers: self.layers,
            heads: self.heads,
            max_len: self.max_len,
            mlp_mult: self.mlp_mult,
        }
    }

    pub fn slots(&self) -> usize {
        self.grid * self.grid
    }

    pub fn stage_steps(&self, stage: Stage) -> u64 {
        match stage {
            Stage::One => self.stage1_steps,
            Stage::Two => self.stage2_steps,
            Stage::Chat => self.chat_steps,
            Stage::Gen => self.gen_steps,
        }
    }

    pub fn train(&self, stage: Stage) -> TrainConfig {
        TrainConfig {
            stage,
            peak_lr: self.peak_lr,
            warmup_frac: self.warmup_frac,
            steps: self.stage_steps(stage),
            batch_size: self.batch_size,
            clip: self.clip,
            loss: LossConfig {
                lambda: self.lambda,
                kind: self.regression,
            },
            adam: AdamWConfig {
                weight_decay: self.weight_decay,
                ..AdamWConfig::default()
            },
            seed: mmgen_core::derive_seed(self.seed, 0x5_7A6E_0000 + stage as u64),
        }
    }

    /// The decoder's bottleneck holds one pixel per condition slot.
    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            image_size: self.image_size,
            channels: 3,
            base: self.dec_base,
            mid: self.dec_mid,
            cond_channels: self.dec_cond_channels,
            cond_dim: self.dim,
            slots: self.slots(),
            time_dim: self.dec_time_dim,
            heads: self.dec_heads,
        }
    }

    pub fn decoder_train(&self) -> DecoderTrainConfig {
        DecoderTrainConfig {
            steps: self.dec_steps,
            batch_size: self.dec_batch,
            peak_lr: self.dec_lr,
            drop_prob: self.drop_prob,
            noise_offset: self.noise_offset,
            seed: mmgen_core::derive_seed(self.seed, 0xDEC),
            ..DecoderTrainConfig::default()
        }
    }

    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            steps: self.sample_steps,
            guidance: self.guidance,
            kind: self.sampler,
            seed,
        }
    }
}
