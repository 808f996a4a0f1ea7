//! Shared numerics: a GEMM-backed float abstraction, tensors, layers with
//! hand-derived backward passes, AdamW, images, and deterministic RNG.

pub mod error;
pub mod gradcheck;
pub mod image;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod real;
pub mod rng;
pub mod tensor;

pub use error::CoreError;
pub use image::ImageTensor;
pub use optim::{AdamW, AdamWConfig, Frozen};
pub use real::{DType, Real};
pub use rng::{derive_seed, seeded, DetRng, RngState};
pub use tensor::{scoped, ParamSet, Tensor};
