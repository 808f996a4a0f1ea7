//! The shots-vs-accuracy experiment and its plain-text report.

use std::fmt;

use mmgen_core::ImageTensor;
use mmgen_mmlm::{Decoding, Model};
use mmgen_mmtok::{FormatConfig, Supervision, Vocab};

use crate::error::FewShotError;
use crate::prompt::{build_prompt, stop_token, EvalItem, ShotConfig};
use crate::rices::{embed_all, rices_select};
use crate::score::score_exact_match;

/// A retrieval pool and a disjoint test set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTask {
    pub pool: Vec<EvalItem>,
    pub test: Vec<EvalItem>,
}

impl EvalTask {
    /// Rejects test items that also appear in the pool.
    pub fn validate(&self) -> Result<(), FewShotError> {
        match self.test.iter().position(|t| self.pool.contains(t)) {
            Some(i) => Err(FewShotError::Overlap(i)),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalRecord {
    pub item: usize,
    pub k: usize,
    pub prediction: String,
    pub gold: String,
    pub score: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShotSummary {
    pub k: usize,
    pub correct: usize,
    pub total: usize,
}

impl ShotSummary {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub summary: Vec<ShotSummary>,
}

impl EvalReport {
    pub fn accuracy(&self, k: usize) -> Option<f64> {
        self.summary.iter().find(|s| s.k == k).map(ShotSummary::accuracy)
    }
}

/// One tab-separated record per line, then `# k=… accuracy=… correct=… total=…`
/// summary lines in shot order.
impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.records {
            writeln!(
                f,
                "item={}\tk={}\tprediction={}\tgold={}\tscore={}",
                r.item, r.k, r.prediction, r.gold, r.score
            )?;
        }
        for s in &self.summary {
            writeln!(
                f,
                "# k={} accuracy={:.6} correct={} total={}",
                s.k,
                s.accuracy(),
                s.correct,
                s.total
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub separator: String,
    pub max_new: usize,
    pub decoding: Decoding,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            separator: crate::prompt::SEPARATOR.to_string(),
            max_new: 4,
            decoding: Decoding::Greedy,
        }
    }
}

fn images(items: &[EvalItem]) -> Vec<&ImageTensor> {
    items.iter().map(|i| &i.image).collect()
}

/// For every shot count: retrieve, prompt, generate until the separator and
/// score. Records come out in (shot, item) order.
pub fn run_eval(
    model: &Model<f32>,
    vocab: &Vocab,
    task: &EvalTask,
    shots: &[usize],
    opts: &EvalOptions,
) -> Result<EvalReport, FewShotError> {
    task.validate()?;
    let pool_emb = embed_all(&model.encoder, &images(&task.pool))?;
    let test_emb = embed_all(&model.encoder, &images(&task.test))?;
    let stop = stop_token(vocab, &opts.separator)?;
    let fmt = FormatConfig {
        slots_per_image: model.slots(),
        max_len: model.lm.cfg.max_len.saturating_sub(opts.max_new),
        supervision: Supervision::Captioning,
        ..FormatConfig::default()
    };
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for &k in shots {
        let cfg = ShotConfig {
            k,
            separator: opts.separator.clone(),
        };
        let mut correct = 0;
        for (i, query) in task.test.iter().enumerate() {
            let picks = rices_select(&test_emb[i], &pool_emb, k)?;
            let examples: Vec<&EvalItem> = picks.iter().map(|&p| &task.pool[p]).collect();
            let prompt = build_prompt(vocab, fmt, &examples, query, &cfg)?;
            let mut out = model.generate_text(&prompt, opts.max_new, opts.decoding, stop)?;
            if out.last() == Some(&stop) {
                out.pop();
            }
            let prediction = vocab.render(&out)?;
            let score = score_exact_match(&prediction, &query.answer);
            correct += usize::from(score);
            records.push(EvalRecord {
                item: i,
                k,
                prediction,
                gold: query.answer.clone(),
                score,
            });
        }
        summary.push(ShotSummary {
            k,
            correct,
            total: task.test.len(),
        });
    }
    Ok(EvalReport { records, summary })
}
