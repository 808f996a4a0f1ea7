//! Multimodal modeling: a causal transformer over text tokens and visual
//! embeddings trained to predict the next element.

pub mod config;
pub mod error;
pub mod generate;
pub mod lm;
pub mod loss;
pub mod model;
pub mod train;

pub use config::{LmConfig, LossConfig, RegressionKind, Stage, TrainConfig};
pub use error::LmError;
pub use generate::Decoding;
pub use lm::{Lm, Outputs, VisualInputs};
pub use loss::{loss, LossValue, TargetCounts};
pub use model::{Example, Features, Model, ENCODER_SCOPE, LM_SCOPE};
pub use train::{check_stage, run_stage, StepMetrics, Trainer};
