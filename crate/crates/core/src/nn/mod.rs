//! Layers with explicit forward caches and hand-derived backward passes.

pub mod act;
pub mod attention;
pub mod block;
pub mod conv;
pub mod linear;
pub mod norm;

pub use attention::{CrossAttention, SelfAttention};
pub use block::{Block, BlockCache};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::LayerNorm;
