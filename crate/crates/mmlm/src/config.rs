use std::fmt;
use std::str::FromStr;

use mmgen_core::AdamWConfig;

use crate::error::LmError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub mlp_mult: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            dim: 64,
            layers: 4,
            heads: 4,
            max_len: 512,
            mlp_mult: 4,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if self.vocab_size == 0 || self.dim == 0 || self.max_len == 0 || self.mlp_mult == 0 {
            return Err(LmError::Config("sizes must be positive".into()));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(LmError::Config("dim not divisible by heads".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Captioning on pairs; the whole encoder trains.
    One,
    /// Frozen encoder (projection excepted); text and regression losses.
    Two,
    Chat,
    Gen,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::One => "1",
            Stage::Two => "2",
            Stage::Chat => "chat",
            Stage::Gen => "gen",
        }
    }

    pub fn freezes_encoder(self) -> bool {
        self != Stage::One
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = LmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Stage::One),
            "2" => Ok(Stage::Two),
            "chat" => Ok(Stage::Chat),
            "gen" => Ok(Stage::Gen),
            _ => Err(LmError::Config(format!("unknown stage `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegressionKind {
    /// Mean squared error over positions and dimensions.
    Mse,
    /// Mean of `1 - cos(prediction, target)` over positions.
    Cosine,
}

impl FromStr for RegressionKind {
    type Err = LmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mse" => Ok(RegressionKind::Mse),
            "cosine" => Ok(RegressionKind::Cosine),
            _ => Err(LmError::Config(format!("unknown regression loss `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the regression term.
    pub lambda: f64,
    pub kind: RegressionKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            kind: RegressionKind::Mse,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub clip: f64,
    pub loss: LossConfig,
    pub adam: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::One,
            peak_lr: 1e-3,
            warmup_frac: 0.05,
            steps: 200,
            batch_size: 8,
            clip: 5.0,
            loss: LossConfig::default(),
            adam: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_frac * self.steps as f64).round() as u64
    }

    pub fn validate(&self) -> Result<(), LmError> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(LmError::Config("steps and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) || self.peak_lr <= 0.0 || self.clip <= 0.0 {
            return Err(LmError::Config("learning-rate schedule or clip out of range".into()));
        }
        Ok(())
    }
}
