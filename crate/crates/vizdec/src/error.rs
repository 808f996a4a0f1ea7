use mmgen_core::CoreError;
use mmgen_viztok::VizError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecError {
    #[error("timestep {t} outside 1..={max}")]
    Timestep { t: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("encoder embedding has zero norm")]
    ZeroNorm,
    #[error("non-finite denoising loss at step {0}")]
    NonFinite(u64),
    #[error("decoder training needs a frozen encoder")]
    EncoderNotFrozen,
    #[error(transparent)]
    Viz(#[from] VizError),
    #[error(transparent)]
    Core(#[from] CoreError),
}
