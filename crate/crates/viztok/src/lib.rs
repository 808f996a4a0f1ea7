//! Visual tokenizer: images to a fixed number of model-dimension embeddings.

pub mod config;
pub mod encoder;
pub mod error;
pub mod pool;

pub use config::VizConfig;
pub use encoder::{Encoder, EncoderCache, PROJECTION};
pub use error::VizError;
pub use pool::{patchify, pool_to_grid, pool_to_grid_backward};
