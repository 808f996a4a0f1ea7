use mmgen_core::CoreError;
use mmgen_mmtok::Template;
use mmgen_viztok::VizError;
use thiserror::Error;

use crate::config::Stage;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("sequence of {len} positions exceeds context window {max}")]
    TooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenRange { id: u32, vocab: usize },
    #[error("visual slot {image}:{pos} has no embedding")]
    MissingVisual { image: u32, pos: u32 },
    #[error("stage {stage} cannot train on {template} samples{detail}")]
    StageMismatch {
        stage: Stage,
        template: Template,
        detail: &'static str,
    },
    #[error("non-finite loss at step {step}: ce={ce} reg={reg}")]
    NonFinite { step: u64, ce: f64, reg: f64 },
    #[error("prefix must end with the [IMG] token")]
    OpenImageExpected,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Viz(#[from] VizError),
    #[error(transparent)]
    Core(#[from] CoreError),
}
