//! Few-shot evaluation: retrieval of in-context examples, prompt assembly,
//! exact-match scoring and the shots-vs-accuracy run.

pub mod error;
pub mod eval;
pub mod prompt;
pub mod rices;
pub mod score;

pub use error::FewShotError;
pub use eval::{run_eval, EvalOptions, EvalRecord, EvalReport, EvalTask, ShotSummary};
pub use prompt::{
    build_episode, build_prompt, stop_token, EvalItem, ShotConfig, ANSWER_CUE, FEW_SHOT_LEAD, SEPARATOR,
    SHOT_COUNTS, ZERO_SHOT_LEAD,
};
pub use rices::{embed_all, rices_select};
pub use score::score_exact_match;
