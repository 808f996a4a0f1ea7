use std::path::{Path, PathBuf};

use mmgen_core::CoreError;
use mmgen_fewshot::FewShotError;
use mmgen_mmlm::LmError;
use mmgen_mmtok::TokError;
use mmgen_vizdec::DecError;
use mmgen_viztok::VizError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Tok(#[from] TokError),
    #[error(transparent)]
    Viz(#[from] VizError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Dec(#[from] DecError),
    #[error(transparent)]
    FewShot(#[from] FewShotError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
