//! The next-element loss: cross-entropy on text targets plus weighted
//! regression on visual targets. The prediction for position `i` is read
//! from the outputs at position `i - 1`.

use mmgen_core::Real;
use mmgen_mmtok::{Element, SequenceSample};

use crate::config::{LossConfig, RegressionKind};
use crate::lm::{Outputs, VisualInputs};

/// Loss components of a batch. `ce` and `reg` are means over their target
/// positions; an empty target set contributes zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValue {
    pub ce: f64,
    pub reg: f64,
    pub total: f64,
}

/// Number of targets of each kind across a batch; the loss means divide by
/// these.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TargetCounts {
    pub text: usize,
    pub visual: usize,
}

impl TargetCounts {
    pub fn of<'a>(samples: impl IntoIterator<Item = &'a SequenceSample>) -> Self {
        samples.into_iter().fold(Self::default(), |acc, s| Self {
            text: acc.text + supervised(&s.text_mask),
            visual: acc.visual + supervised(&s.visual_mask),
        })
    }
}

fn supervised(mask: &[bool]) -> usize {
    mask.iter().skip(1).filter(|&&m| m).count()
}

/// One sample's share of the batch loss with the gradient of that share.
pub struct SampleLoss<T> {
    pub ce: f64,
    pub reg: f64,
    pub dlogits: Vec<T>,
    pub dvisual: Vec<T>,
}

/// Evaluates `sample`'s contribution to the batch means given the batch-wide
/// `counts`. Visual targets use the same row layout as visual inputs.
pub fn sample_loss<T: Real>(
    out: &Outputs<T>,
    sample: &SequenceSample,
    targets: VisualInputs<'_, T>,
    counts: TargetCounts,
    cfg: LossConfig,
) -> SampleLoss<T> {
    let rows = out.logits.rows();
    let vocab = out.logits.cols();
    let dim = out.visual.cols();
    let mut dlogits = vec![T::zero(); rows * vocab];
    let mut dvisual = vec![T::zero(); rows * dim];
    let (mut ce, mut reg) = (0.0, 0.0);
    let text_scale = if counts.text > 0 { 1.0 / counts.text as f64 } else { 0.0 };
    let reg_scale = if counts.visual > 0 {
        cfg.lambda / counts.visual as f64
    } else {
        0.0
    };
    for i in 1..rows.min(sample.elements.len()) {
        let src = i - 1;
        if sample.text_mask[i] {
            let Element::Token(t) = sample.elements[i] else {
                continue;
            };
            let logits = out.logits.row(src);
            let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = logits.iter().map(|&l| (l - max).exp()).sum();
            let log_z = max + z.ln();
            ce += (log_z - logits[t.index()]).as_f64();
            let g = &mut dlogits[src * vocab..(src + 1) * vocab];
            let s = T::lit(text_scale);
            for (gj, &l) in g.iter_mut().zip(logits) {
                *gj = (l - log_z).exp() * s;
            }
            g[t.index()] -= s;
        }
        if sample.visual_mask[i] {
            let Element::Visual { image, pos } = sample.elements[i] else {
                continue;
            };
            let r = image as usize * targets.slots + pos as usize;
            let target = &targets.data[r * dim..(r + 1) * dim];
            let pred = out.visual.row(src);
            let g = &mut dvisual[src * dim..(src + 1) * dim];
            reg += regression(pred, target, g, cfg.kind, reg_scale);
        }
    }
    SampleLoss {
        ce: ce * text_scale,
        reg: if counts.visual > 0 { reg / counts.visual as f64 } else { 0.0 },
        dlogits,
        dvisual,
    }
}

/// Per-position regression loss; writes `scale ×` its gradient into `grad`.
fn regression<T: Real>(pred: &[T], target: &[T], grad: &mut [T], kind: RegressionKind, scale: f64) -> f64 {
    let d = pred.len();
    match kind {
        RegressionKind::Mse => {
            let mut sum = 0.0;
            let k = T::lit(2.0 * scale / d as f64);
            for ((g, &p), &t) in grad.iter_mut().zip(pred).zip(target) {
                let diff = p - t;
                sum += (diff * diff).as_f64();
                *g = k * diff;
            }
            sum / d as f64
        }
        RegressionKind::Cosine => {
            let dot: f64 = pred.iter().zip(target).map(|(a, b)| (*a * *b).as_f64()).sum();
            let pp: f64 = pred.iter().map(|a| (*a * *a).as_f64()).sum();
            let tt: f64 = target.iter().map(|a| (*a * *a).as_f64()).sum();
            let (np, nt) = (pp.sqrt().max(1e-12), tt.sqrt().max(1e-12));
            let cos = dot / (np * nt);
            // d(1 - cos)/dp = -(t / (|p||t|) - cos · p / |p|²)
            for ((g, &p), &t) in grad.iter_mut().zip(pred).zip(target) {
                let gp = -(t.as_f64() / (np * nt) - cos * p.as_f64() / (np * np));
                *g = T::lit(scale * gp);
            }
            1.0 - cos
        }
    }
}

impl LossValue {
    pub fn combine(ce: f64, reg: f64, lambda: f64) -> Self {
        Self {
            ce,
            reg,
            total: ce + lambda * reg,
        }
    }
}

/// Loss of a single sample against fixed outputs.
pub fn loss<T: Real>(
    out: &Outputs<T>,
    sample: &SequenceSample,
    targets: VisualInputs<'_, T>,
    cfg: LossConfig,
) -> LossValue {
    let part = sample_loss(out, sample, targets, TargetCounts::of([sample]), cfg);
    LossValue::combine(part.ce, part.reg, cfg.lambda)
}
