//! The visual encoder: patchify, per-patch linear map, optional
//! self-attention over patches, grid mean-pooling, and a linear projection to
//! the model dimension.

use mmgen_core::nn::{Block, BlockCache, Linear};
use mmgen_core::{scoped, Frozen, ImageTensor, ParamSet, Real, Tensor};
use rand::Rng;

use crate::config::VizConfig;
use crate::error::VizError;
use crate::pool::{patchify, pool_to_grid, pool_to_grid_backward};

/// Name of the only array group that stays trainable while frozen.
pub const PROJECTION: &str = "proj";

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    pub cfg: VizConfig,
    pub patch: Linear<T>,
    /// Patch position embedding; present only when there are attention blocks.
    pub pos: Option<Tensor<T>>,
    pub blocks: Vec<Block<T>>,
    pub proj: Linear<T>,
    frozen: bool,
}

/// Intermediate values of one image's forward pass.
pub struct EncoderCache<T> {
    patches: Vec<T>,
    block_caches: Vec<BlockCache<T>>,
    /// `grid² × enc_dim` pooled features, the projection's input.
    pub pooled: Vec<T>,
}

impl<T: Real> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: VizConfig, rng: &mut R) -> Result<Self, VizError> {
        cfg.validate()?;
        let d = cfg.enc_dim;
        let patch = Linear::new(cfg.patch_dim(), d, 1.0 / (cfg.patch_dim() as f64).sqrt(), rng);
        let pos = (cfg.blocks > 0).then(|| Tensor::randn(&[cfg.num_patches(), d], 0.1, rng));
        let std = 1.0 / (d as f64).sqrt();
        let resid = 1.0 / ((2 * cfg.blocks.max(1)) as f64).sqrt();
        let blocks = (0..cfg.blocks)
            .map(|_| Block::new(d, cfg.heads, 4, std, resid, rng))
            .collect();
        let proj = Linear::new(d, cfg.model_dim, std, rng);
        Ok(Self {
            cfg,
            patch,
            pos,
            blocks,
            proj,
            frozen: false,
        })
    }

    /// A zero-valued encoder of identical layout, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg,
            patch: Linear::zeros(self.patch.input_dim(), self.patch.output_dim()),
            pos: self.pos.as_ref().map(Tensor::zeros_like),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            proj: Linear::zeros(self.proj.input_dim(), self.proj.output_dim()),
            frozen: self.frozen,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// While frozen, every array except the output projection rejects
    /// optimizer updates.
    pub fn set_frozen(mut self, frozen: bool) -> Self {
        self.frozen = frozen;
        self
    }

    pub fn freeze(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Whether the array with local name `name` is currently frozen.
    pub fn array_frozen(&self, name: &str) -> bool {
        self.frozen && !name.starts_with(PROJECTION)
    }

    fn check_image(&self, image: &ImageTensor) -> Result<(), VizError> {
        let c = &self.cfg;
        let want = (c.image_size, c.image_size, c.channels);
        let got = (image.height, image.width, image.channels);
        if got != want {
            return Err(VizError::ImageShape { got, want });
        }
        Ok(())
    }

    /// Everything up to and including pooling.
    pub fn features(&self, image: &ImageTensor) -> Result<EncoderCache<T>, VizError> {
        self.check_image(image)?;
        let c = &self.cfg;
        let rows = c.num_patches();
        let patches = patchify::<T>(image, c.patch);
        let mut h = self.patch.forward(&patches, rows);
        if let Some(pos) = &self.pos {
            h.iter_mut().zip(&pos.data).for_each(|(a, &p)| *a += p);
        }
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, cache) = block.forward(&h, rows, false);
            h = y;
            block_caches.push(cache);
        }
        let pooled = pool_to_grid(&h, c.side(), c.enc_dim, c.grid)?;
        Ok(EncoderCache {
            patches,
            block_caches,
            pooled,
        })
    }

    /// Projects pooled features to `grid² × model_dim` embeddings.
    pub fn project(&self, pooled: &[T]) -> Vec<T> {
        self.proj.forward(pooled, self.cfg.slots())
    }

    /// `grid² × model_dim` embeddings of one image.
    pub fn tokenize_image(&self, image: &ImageTensor) -> Result<Tensor<T>, VizError> {
        let cache = self.features(image)?;
        Ok(Tensor::from_vec(
            &[self.cfg.slots(), self.cfg.model_dim],
            self.project(&cache.pooled),
        ))
    }

    /// Mean over slots of [`Encoder::tokenize_image`], in f64.
    pub fn mean_embedding(&self, image: &ImageTensor) -> Result<Vec<f64>, VizError> {
        let tokens = self.tokenize_image(image)?;
        let mut mean = vec![0.0; tokens.cols()];
        for r in 0..tokens.rows() {
            mean.iter_mut().zip(tokens.row(r)).for_each(|(m, v)| *m += v.as_f64());
        }
        let n = tokens.rows() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    /// Accumulates the projection gradient only.
    pub fn project_backward(&self, pooled: &[T], dy: &[T], grad: &mut Encoder<T>) {
        self.proj.accumulate(pooled, dy, self.cfg.slots(), &mut grad.proj);
    }

    /// Accumulates gradients of every array given the embedding gradient `dy`.
    pub fn backward(
        &self,
        cache: &EncoderCache<T>,
        dy: &[T],
        grad: &mut Encoder<T>,
    ) -> Result<(), VizError> {
        let c = &self.cfg;
        let rows = c.num_patches();
        let dpooled = self.proj.backward(&cache.pooled, dy, c.slots(), &mut grad.proj);
        let mut dh = pool_to_grid_backward(&dpooled, c.side(), c.enc_dim, c.grid)?;
        for (i, block) in self.blocks.iter().enumerate().rev() {
            dh = block.backward(&cache.block_caches[i], &dh, rows, false, &mut grad.blocks[i]);
        }
        if let Some(gpos) = grad.pos.as_mut() {
            gpos.data.iter_mut().zip(&dh).for_each(|(g, &d)| *g += d);
        }
        self.patch.accumulate(&cache.patches, &dh, rows, &mut grad.patch);
        Ok(())
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.patch.tensors(&scoped(prefix, "patch"), out);
        if let Some(pos) = &self.pos {
            out.push((scoped(prefix, "pos"), pos));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.tensors(&scoped(prefix, &format!("block{i}")), out);
        }
        self.proj.tensors(&scoped(prefix, PROJECTION), out);
    }

    pub fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.patch.tensors_mut(&scoped(prefix, "patch"), out);
        if let Some(pos) = &mut self.pos {
            out.push((scoped(prefix, "pos"), pos));
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.tensors_mut(&scoped(prefix, &format!("block{i}")), out);
        }
        self.proj.tensors_mut(&scoped(prefix, PROJECTION), out);
    }
}

impl<T: Real> ParamSet<T> for Encoder<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.named("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.named_mut("", &mut out);
        out
    }
}

impl<T: Real> Frozen for Encoder<T> {
    fn is_frozen(&self, name: &str) -> bool {
        self.array_frozen(name)
    }
}
