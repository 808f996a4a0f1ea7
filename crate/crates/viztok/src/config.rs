use crate::error::VizError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VizConfig {
    /// Square image side in pixels.
    pub image_size: usize,
    pub channels: usize,
    pub patch: usize,
    pub enc_dim: usize,
    /// Pooled grid side; the encoder emits `grid²` embeddings.
    pub grid: usize,
    pub model_dim: usize,
    /// Self-attention blocks over patches; zero disables them.
    pub blocks: usize,
    pub heads: usize,
}

impl Default for VizConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            patch: 4,
            enc_dim: 32,
            grid: 8,
            model_dim: 64,
            blocks: 1,
            heads: 4,
        }
    }
}

impl VizConfig {
    pub fn validate(&self) -> Result<(), VizError> {
        let bad = |m: &str| Err(VizError::Config(m.to_string()));
        if [self.image_size, self.channels, self.patch, self.enc_dim, self.grid, self.model_dim]
            .contains(&0)
        {
            return bad("sizes must be positive");
        }
        if self.image_size % self.patch != 0 {
            return bad("image size not divisible by patch size");
        }
        if self.side() % self.grid != 0 {
            return Err(VizError::Indivisible {
                side: self.side(),
                grid: self.grid,
            });
        }
        if self.blocks > 0 && (self.heads == 0 || self.enc_dim % self.heads != 0) {
            return bad("encoder dim not divisible by head count");
        }
        Ok(())
    }

    /// Patches along one side.
    pub fn side(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn num_patches(&self) -> usize {
        self.side() * self.side()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    /// Embeddings per image.
    pub fn slots(&self) -> usize {
        self.grid * self.grid
    }
}
