//! The trainable unit: visual encoder plus transformer, with the batch loss
//! and its gradient.

use mmgen_core::{Frozen, ImageTensor, ParamSet, Real, Tensor};
use mmgen_mmtok::{Element, SequenceSample, TokenId};
use mmgen_viztok::{Encoder, EncoderCache};

use crate::config::LossConfig;
use crate::error::LmError;
use crate::lm::{Lm, VisualInputs};
use crate::loss::{sample_loss, LossValue, TargetCounts};

pub const ENCODER_SCOPE: &str = "viztok";
pub const LM_SCOPE: &str = "mmlm";

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub encoder: Encoder<T>,
    pub lm: Lm<T>,
}

/// Encoder activations of one sample's images.
pub enum Features<T> {
    /// Full caches; gradients flow through the whole encoder.
    Full(Vec<EncoderCache<T>>),
    /// Pooled features only; gradients stop at the projection.
    Pooled(Vec<Vec<T>>),
}

impl<T: Real> Features<T> {
    pub fn len(&self) -> usize {
        match self {
            Features::Full(c) => c.len(),
            Features::Pooled(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pooled(&self, i: usize) -> &[T] {
        match self {
            Features::Full(c) => &c[i].pooled,
            Features::Pooled(p) => &p[i],
        }
    }
}

/// One sample with its encoder activations and regression targets.
pub struct Example<'a, T> {
    pub sample: &'a SequenceSample,
    pub features: &'a Features<T>,
    /// Target embeddings laid out like the visual inputs; may be empty when
    /// the sample has no visual targets.
    pub targets: &'a [T],
    /// Padding positions appended after the sample; they carry no loss.
    pub pad: usize,
}

impl<T: Real> Model<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            lm: self.lm.zeros_like(),
        }
    }

    pub fn slots(&self) -> usize {
        self.encoder.cfg.slots()
    }

    /// Encoder activations; `Full` when the encoder is trainable.
    pub fn features(&self, images: &[ImageTensor]) -> Result<Features<T>, LmError> {
        let caches = images
            .iter()
            .map(|im| self.encoder.features(im))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(if self.encoder.is_frozen() {
            Features::Pooled(caches.into_iter().map(|c| c.pooled).collect())
        } else {
            Features::Full(caches)
        })
    }

    /// Projected embeddings of every image, concatenated.
    pub fn visual_inputs(&self, features: &Features<T>) -> Vec<T> {
        (0..features.len())
            .flat_map(|i| self.encoder.project(features.pooled(i)))
            .collect()
    }

    fn visual_backward(
        &self,
        features: &Features<T>,
        dvis: &[T],
        grad: &mut Model<T>,
    ) -> Result<(), LmError> {
        let width = self.slots() * self.lm.cfg.dim;
        match features {
            Features::Full(caches) => {
                for (c, dy) in caches.iter().zip(dvis.chunks(width)) {
                    self.encoder.backward(c, dy, &mut grad.encoder)?;
                }
            }
            Features::Pooled(pooled) => {
                for (p, dy) in pooled.iter().zip(dvis.chunks(width)) {
                    self.encoder.project_backward(p, dy, &mut grad.encoder);
                }
            }
        }
        Ok(())
    }

    /// Batch loss; when `grad` is given, its gradient is accumulated there.
    pub fn batch_loss(
        &self,
        batch: &[Example<'_, T>],
        cfg: LossConfig,
        mut grad: Option<&mut Model<T>>,
    ) -> Result<LossValue, LmError> {
        let counts = TargetCounts::of(batch.iter().map(|e| e.sample));
        let slots = self.slots();
        let dim = self.lm.cfg.dim;
        let (mut ce, mut reg) = (0.0, 0.0);
        for ex in batch {
            let s = ex.sample;
            let visual = self.visual_inputs(ex.features);
            let inputs = VisualInputs { data: &visual, slots };
            let targets = VisualInputs { data: ex.targets, slots };
            check_targets(s, targets, dim)?;
            let padded;
            let elements: &[Element] = if ex.pad > 0 {
                padded = s
                    .elements
                    .iter()
                    .copied()
                    .chain(std::iter::repeat_n(Element::Token(TokenId(0)), ex.pad))
                    .collect::<Vec<_>>();
                &padded
            } else {
                &s.elements
            };
            let (out, cache) = self.lm.forward(elements, inputs)?;
            let part = sample_loss(&out, s, targets, counts, cfg);
            ce += part.ce;
            reg += part.reg;
            if let Some(g) = grad.as_deref_mut() {
                let dvis = self.lm.backward(
                    elements,
                    inputs,
                    &cache,
                    &part.dlogits,
                    &part.dvisual,
                    &mut g.lm,
                );
                self.visual_backward(ex.features, &dvis, g)?;
            }
        }
        Ok(LossValue::combine(ce, reg, cfg.lambda))
    }
}

fn check_targets<T: Real>(s: &SequenceSample, targets: VisualInputs<'_, T>, dim: usize) -> Result<(), LmError> {
    for (e, &m) in s.elements.iter().zip(&s.visual_mask).skip(1) {
        if let (true, Element::Visual { image, pos }) = (m, *e) {
            let r = image as usize * targets.slots + pos as usize;
            if (r + 1) * dim > targets.data.len() {
                return Err(LmError::MissingVisual { image, pos });
            }
        }
    }
    Ok(())
}

impl<T: Real> ParamSet<T> for Model<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.encoder.named(ENCODER_SCOPE, &mut out);
        self.lm.named(LM_SCOPE, &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.encoder.named_mut(ENCODER_SCOPE, &mut out);
        self.lm.named_mut(LM_SCOPE, &mut out);
        out
    }
}

impl<T: Real> Frozen for Model<T> {
    fn is_frozen(&self, name: &str) -> bool {
        name.strip_prefix(ENCODER_SCOPE)
            .and_then(|n| n.strip_prefix('/'))
            .is_some_and(|n| self.encoder.array_frozen(n))
    }
}
