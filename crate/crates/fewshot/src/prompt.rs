//! Few-shot prompt assembly.

use mmgen_core::ImageTensor;
use mmgen_mmtok::{
    encode_document, encode_prompt, DocBlock, FormatConfig, InstructionPart, SequenceSample, TokenId,
    Vocab,
};

use crate::error::FewShotError;

pub const FEW_SHOT_LEAD: &str = "based on the picture,";
pub const ZERO_SHOT_LEAD: &str = "based on the picture, answer in one word or phrase.";
pub const ANSWER_CUE: &str = "short answer:";
pub const SEPARATOR: &str = ". ";
pub const SHOT_COUNTS: [usize; 5] = [0, 2, 4, 8, 16];

/// One visual question with its gold answer.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub image: ImageTensor,
    pub question: String,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShotConfig {
    pub k: usize,
    pub separator: String,
}

impl ShotConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            separator: SEPARATOR.to_string(),
        }
    }
}

/// `[lead] [question] short answer:` for the query, with ` [answer]` for examples.
fn block_text(lead: &str, item: &EvalItem, with_answer: bool) -> String {
    let mut text = format!("{lead} {} {ANSWER_CUE}", item.question);
    if with_answer {
        text.push(' ');
        text.push_str(&item.answer);
    }
    text
}

fn lead(k: usize) -> &'static str {
    if k == 0 {
        ZERO_SHOT_LEAD
    } else {
        FEW_SHOT_LEAD
    }
}

/// Examples in order, each followed by the separator, then the unanswered
/// query. The result is an open prompt for generation.
pub fn build_prompt(
    vocab: &Vocab,
    fmt: FormatConfig,
    examples: &[&EvalItem],
    query: &EvalItem,
    cfg: &ShotConfig,
) -> Result<SequenceSample, FewShotError> {
    if examples.len() != cfg.k {
        return Err(FewShotError::ShotCount {
            expected: cfg.k,
            got: examples.len(),
        });
    }
    let mut parts = Vec::with_capacity(2 * cfg.k + 2);
    for ex in examples {
        let text = format!("{}{}", block_text(lead(cfg.k), ex, true), cfg.separator);
        parts.push(InstructionPart::Image(ex.image.clone()));
        parts.push(InstructionPart::Text(vocab.tokenize(&text)?));
    }
    parts.push(InstructionPart::Image(query.image.clone()));
    parts.push(InstructionPart::Text(vocab.tokenize(&block_text(lead(cfg.k), query, false))?));
    let unbounded = FormatConfig {
        max_len: usize::MAX,
        ..fmt
    };
    let prompt = encode_prompt(vocab, unbounded, &parts)?;
    if prompt.len() > fmt.max_len {
        return Err(FewShotError::PromptTooLong {
            len: prompt.len(),
            max: fmt.max_len,
        });
    }
    Ok(prompt)
}

/// A fully answered episode in the few-shot layout, as a supervised
/// interleaved document for training.
pub fn build_episode(
    vocab: &Vocab,
    fmt: FormatConfig,
    items: &[&EvalItem],
    separator: &str,
    seed: u64,
) -> Result<SequenceSample, FewShotError> {
    let doc = items
        .iter()
        .map(|it| {
            let text = format!("{}{}", block_text(FEW_SHOT_LEAD, it, true), separator);
            Ok(DocBlock {
                image: Some(it.image.clone()),
                text: vocab.tokenize(&text)?,
            })
        })
        .collect::<Result<Vec<_>, FewShotError>>()?;
    Ok(encode_document(vocab, fmt, &doc, seed)?)
}

/// Tokens of the separator with surrounding whitespace removed; generation
/// stops on its first token.
pub fn stop_token(vocab: &Vocab, separator: &str) -> Result<TokenId, FewShotError> {
    let ids = vocab.tokenize(separator)?;
    Ok(*ids.first().ok_or(mmgen_mmtok::TokError::Empty("separator"))?)
}
