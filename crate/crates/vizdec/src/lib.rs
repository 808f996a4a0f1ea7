//! Diffusion detokenizer: turns encoder embeddings back into images.

pub mod decoder;
pub mod error;
pub mod schedule;
pub mod unet;

pub use decoder::{
    cfg_combine, from_model_space, similarity, to_model_space, train_decoder,
    Decoder, DecoderExample, DecoderStep, DecoderTrainConfig, DecoderTrainer, NoiseDraw, SamplerConfig,
    SamplerKind, CONDITION_DROP, GUIDANCE_SCALE, SAMPLING_STEPS,
};
pub use error::DecError;
pub use schedule::DiffusionSchedule;
pub use unet::{UNet, UNetCache, UNetConfig};
