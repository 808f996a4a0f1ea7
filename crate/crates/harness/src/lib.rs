//! Synthetic shapes corpus, run configuration, checkpoints, and the pipeline
//! behind the `mmgen` command line.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod pipeline;
pub mod synth;
pub mod task;

pub use checkpoint::Checkpoint;
pub use config::Config;
pub use corpus::Corpus;
pub use error::HarnessError;
