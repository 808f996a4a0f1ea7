//! The decoder-only transformer over mixed token / visual-embedding inputs.

use mmgen_core::nn::{Block, BlockCache, LayerNorm, Linear};
use mmgen_core::nn::norm::LayerNormCache;
use mmgen_core::{scoped, Real, Tensor};
use mmgen_mmtok::Element;
use rand::Rng;

use crate::config::LmConfig;
use crate::error::LmError;

#[derive(Clone, Debug, PartialEq)]
pub struct Lm<T> {
    pub cfg: LmConfig,
    pub embed: Tensor<T>,
    pub pos: Tensor<T>,
    pub blocks: Vec<Block<T>>,
    pub ln_f: LayerNorm<T>,
    pub head: Linear<T>,
    pub reg_head: Linear<T>,
}

/// Per-position outputs of both heads.
#[derive(Clone, Debug)]
pub struct Outputs<T> {
    /// `rows × vocab`.
    pub logits: Tensor<T>,
    /// `rows × dim` predicted next visual embedding.
    pub visual: Tensor<T>,
}

pub struct LmCache<T> {
    rows: usize,
    blocks: Vec<BlockCache<T>>,
    ln_f: LayerNormCache<T>,
    normed: Vec<T>,
}

/// Visual inputs of a sequence: row `image * slots + pos` holds the embedding
/// of slot `pos` of image `image`.
#[derive(Clone, Copy, Debug)]
pub struct VisualInputs<'a, T> {
    pub data: &'a [T],
    pub slots: usize,
}

impl<'a, T: Real> VisualInputs<'a, T> {
    pub fn none() -> Self {
        Self { data: &[], slots: 1 }
    }

    fn row(&self, image: u32, pos: u32, dim: usize) -> Result<&'a [T], LmError> {
        let r = image as usize * self.slots + pos as usize;
        if pos as usize >= self.slots || (r + 1) * dim > self.data.len() {
            return Err(LmError::MissingVisual { image, pos });
        }
        Ok(&self.data[r * dim..(r + 1) * dim])
    }
}

impl<T: Real> Lm<T> {
    pub fn new<R: Rng + ?Sized>(cfg: LmConfig, rng: &mut R) -> Result<Self, LmError> {
        cfg.validate()?;
        let d = cfg.dim;
        let std = 0.02f64.max(0.5 / (d as f64).sqrt());
        let resid = 1.0 / ((2 * cfg.layers.max(1)) as f64).sqrt();
        Ok(Self {
            cfg,
            embed: Tensor::randn(&[cfg.vocab_size, d], std, rng),
            pos: Tensor::randn(&[cfg.max_len, d], std * 0.5, rng),
            blocks: (0..cfg.layers)
                .map(|_| Block::new(d, cfg.heads, cfg.mlp_mult, std, resid, rng))
                .collect(),
            ln_f: LayerNorm::new(d),
            head: Linear::new(d, cfg.vocab_size, std, rng),
            reg_head: Linear::new(d, d, std, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let d = self.cfg.dim;
        Self {
            cfg: self.cfg,
            embed: self.embed.zeros_like(),
            pos: self.pos.zeros_like(),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            ln_f: LayerNorm::zeros(d),
            head: Linear::zeros(d, self.cfg.vocab_size),
            reg_head: Linear::zeros(d, d),
        }
    }

    fn inputs(&self, elements: &[Element], visual: VisualInputs<'_, T>) -> Result<Vec<T>, LmError> {
        let d = self.cfg.dim;
        let n = elements.len();
        if n > self.cfg.max_len {
            return Err(LmError::TooLong {
                len: n,
                max: self.cfg.max_len,
            });
        }
        let mut x = Vec::with_capacity(n * d);
        for (i, e) in elements.iter().enumerate() {
            let src = match *e {
                Element::Token(t) => {
                    if t.index() >= self.cfg.vocab_size {
                        return Err(LmError::TokenRange {
                            id: t.0,
                            vocab: self.cfg.vocab_size,
                        });
                    }
                    self.embed.row(t.index())
                }
                Element::Visual { image, pos } => visual.row(image, pos, d)?,
            };
            x.extend(src.iter().zip(self.pos.row(i)).map(|(&a, &p)| a + p));
        }
        Ok(x)
    }

    /// Causal forward pass over a whole sequence.
    pub fn forward(
        &self,
        elements: &[Element],
        visual: VisualInputs<'_, T>,
    ) -> Result<(Outputs<T>, LmCache<T>), LmError> {
        let rows = elements.len();
        let mut h = self.inputs(elements, visual)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward(&h, rows, true);
            h = y;
            blocks.push(cache);
        }
        let (normed, ln_f) = self.ln_f.forward(&h, rows);
        let logits = self.head.forward(&normed, rows);
        let vis = self.reg_head.forward(&normed, rows);
        Ok((
            Outputs {
                logits: Tensor::from_vec(&[rows, self.cfg.vocab_size], logits),
                visual: Tensor::from_vec(&[rows, self.cfg.dim], vis),
            },
            LmCache {
                rows,
                blocks,
                ln_f,
                normed,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the visual inputs, laid out like them.
    pub fn backward(
        &self,
        elements: &[Element],
        visual: VisualInputs<'_, T>,
        cache: &LmCache<T>,
        dlogits: &[T],
        dvisual_out: &[T],
        grad: &mut Lm<T>,
    ) -> Vec<T> {
        let rows = cache.rows;
        let d = self.cfg.dim;
        let mut dn = self.head.backward(&cache.normed, dlogits, rows, &mut grad.head);
        let dn_reg = self
            .reg_head
            .backward(&cache.normed, dvisual_out, rows, &mut grad.reg_head);
        dn.iter_mut().zip(&dn_reg).for_each(|(a, &b)| *a += b);
        let mut dh = self.ln_f.backward(&cache.ln_f, &dn, rows, &mut grad.ln_f);
        for (i, block) in self.blocks.iter().enumerate().rev() {
            dh = block.backward(&cache.blocks[i], &dh, rows, true, &mut grad.blocks[i]);
        }
        let mut dvis = vec![T::zero(); visual.data.len()];
        for (i, e) in elements.iter().enumerate() {
            let g = &dh[i * d..(i + 1) * d];
            grad.pos.row_mut(i).iter_mut().zip(g).for_each(|(a, &b)| *a += b);
            let dst = match *e {
                Element::Token(t) => grad.embed.row_mut(t.index()),
                Element::Visual { image, pos } => {
                    let r = image as usize * visual.slots + pos as usize;
                    &mut dvis[r * d..(r + 1) * d]
                }
            };
            dst.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
        dvis
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((scoped(prefix, "embed"), &self.embed));
        out.push((scoped(prefix, "pos"), &self.pos));
        for (i, b) in self.blocks.iter().enumerate() {
            b.tensors(&scoped(prefix, &format!("block{i}")), out);
        }
        self.ln_f.tensors(&scoped(prefix, "ln_f"), out);
        self.head.tensors(&scoped(prefix, "head"), out);
        self.reg_head.tensors(&scoped(prefix, "reg_head"), out);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((scoped(prefix, "embed"), &mut self.embed));
        out.push((scoped(prefix, "pos"), &mut self.pos));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.tensors_mut(&scoped(prefix, &format!("block{i}")), out);
        }
        self.ln_f.tensors_mut(&scoped(prefix, "ln_f"), out);
        self.head.tensors_mut(&scoped(prefix, "head"), out);
        self.reg_head.tensors_mut(&scoped(prefix, "reg_head"), out);
    }
}
