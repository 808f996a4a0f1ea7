//! Autoregressive decoding of text tokens and visual embeddings.

use mmgen_core::{Real, Tensor};
use mmgen_mmtok::{Element, SequenceSample, TokenId};

use crate::error::LmError;
use crate::lm::VisualInputs;
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoding {
    Greedy,
    /// Beam search of the given width; finished hypotheses compete on
    /// log-probability divided by generated length.
    Beam(usize),
}

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    logp: f64,
}

impl Hypothesis {
    fn score(&self) -> f64 {
        self.logp / self.tokens.len().max(1) as f64
    }
}

fn log_softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    let max = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v.as_f64() - max).exp()).sum();
    logits.iter().map(|v| v.as_f64() - max - z.ln()).collect()
}

/// Index of the maximum; the lowest index wins ties.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> Model<T> {
    fn next_log_probs(
        &self,
        prefix: &[Element],
        tail: &[TokenId],
        visual: &[T],
    ) -> Result<Vec<f64>, LmError> {
        let elements: Vec<Element> = prefix
            .iter()
            .copied()
            .chain(tail.iter().map(|&t| Element::Token(t)))
            .collect();
        let inputs = VisualInputs {
            data: visual,
            slots: self.slots(),
        };
        let (out, _) = self.lm.forward(&elements, inputs)?;
        Ok(log_softmax(out.logits.row(elements.len() - 1)))
    }

    /// Continues `prefix` with text until `eos` or `max_new` tokens. The
    /// returned tokens include `eos` when it was produced.
    pub fn generate_text(
        &self,
        prefix: &SequenceSample,
        max_new: usize,
        mode: Decoding,
        eos: TokenId,
    ) -> Result<Vec<TokenId>, LmError> {
        let need = prefix.len() + max_new;
        if need > self.lm.cfg.max_len {
            return Err(LmError::TooLong {
                len: need,
                max: self.lm.cfg.max_len,
            });
        }
        let features = self.features(&prefix.images)?;
        let visual = self.visual_inputs(&features);
        let width = match mode {
            Decoding::Greedy => 1,
            Decoding::Beam(k) => k.max(1),
        };
        let mut alive = vec![Hypothesis {
            tokens: Vec::new(),
            logp: 0.0,
        }];
        let mut finished: Vec<Hypothesis> = Vec::new();
        for _ in 0..max_new {
            if alive.is_empty() {
                break;
            }
            let mut candidates: Vec<(Hypothesis, bool)> = Vec::new();
            for h in &alive {
                let lp = self.next_log_probs(&prefix.elements, &h.tokens, &visual)?;
                if width == 1 {
                    let t = argmax(&lp);
                    candidates.push((extend(h, t, lp[t]), t == eos.index()));
                    continue;
                }
                let mut order: Vec<usize> = (0..lp.len()).collect();
                order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
                for &t in order.iter().take(width) {
                    candidates.push((extend(h, t, lp[t]), t == eos.index()));
                }
            }
            // stable: earlier hypotheses and lower ids win ties
            candidates.sort_by(|a, b| b.0.logp.total_cmp(&a.0.logp));
            alive.clear();
            for (h, done) in candidates.into_iter().take(width) {
                if done {
                    finished.push(h);
                } else {
                    alive.push(h);
                }
            }
        }
        let best = finished
            .into_iter()
            .chain(alive)
            .reduce(|a, b| if b.score() > a.score() { b } else { a })
            .expect("at least one hypothesis");
        Ok(best.tokens)
    }

    /// Free-running regression: `slots` steps, each appending its predicted
    /// embedding as the next visual input. `prefix` must end with `[IMG]`.
    pub fn generate_image_embeddings(
        &self,
        prefix: &SequenceSample,
        img_token: TokenId,
    ) -> Result<Tensor<T>, LmError> {
        if prefix.elements.last() != Some(&Element::Token(img_token)) {
            return Err(LmError::OpenImageExpected);
        }
        let slots = self.slots();
        let dim = self.lm.cfg.dim;
        let need = prefix.len() + slots - 1;
        if need > self.lm.cfg.max_len {
            return Err(LmError::TooLong {
                len: need,
                max: self.lm.cfg.max_len,
            });
        }
        let features = self.features(&prefix.images)?;
        let mut visual = self.visual_inputs(&features);
        let image = prefix.images.len() as u32;
        visual.resize((image as usize + 1) * slots * dim, T::zero());
        let mut elements = prefix.elements.clone();
        let mut out = Vec::with_capacity(slots * dim);
        for pos in 0..slots {
            let inputs = VisualInputs {
                data: &visual,
                slots,
            };
            let (o, _) = self.lm.forward(&elements, inputs)?;
            let pred = o.visual.row(elements.len() - 1).to_vec();
            let r = image as usize * slots + pos;
            visual[r * dim..(r + 1) * dim].copy_from_slice(&pred);
            out.extend_from_slice(&pred);
            elements.push(Element::Visual {
                image,
                pos: pos as u32,
            });
        }
        Ok(Tensor::from_vec(&[slots, dim], out))
    }
}

fn extend(h: &Hypothesis, t: usize, lp: f64) -> Hypothesis {
    let mut tokens = h.tokens.clone();
    tokens.push(TokenId(t as u32));
    Hypothesis {
        tokens,
        logp: h.logp + lp,
    }
}
