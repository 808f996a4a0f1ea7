use mmgen_mmlm::LmError;
use mmgen_mmtok::TokError;
use mmgen_viztok::VizError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FewShotError {
    #[error("cannot select {k} examples from a pool of {pool}")]
    PoolTooSmall { k: usize, pool: usize },
    #[error("expected {expected} examples, got {got}")]
    ShotCount { expected: usize, got: usize },
    #[error("prompt of {len} positions exceeds the {max}-position context; reduce the shot count")]
    PromptTooLong { len: usize, max: usize },
    #[error("embedding {index} has zero norm")]
    ZeroNorm { index: usize },
    #[error("pool and test share item {0}")]
    Overlap(usize),
    #[error(transparent)]
    Tok(#[from] TokError),
    #[error(transparent)]
    Viz(#[from] VizError),
    #[error(transparent)]
    Lm(#[from] LmError),
}
