#![allow(dead_code)]

use mmgen_core::{seeded, ImageTensor, Real};
use mmgen_mmtok::{Element, SampleMeta, SequenceSample, Template, TokenId};
use mmgen_viztok::{Encoder, VizConfig};
use mmgen_mmlm::{Lm, LmConfig, Model};
use rand::Rng;

pub const VOCAB: usize = 16;
pub const DIM: usize = 8;

pub fn tiny_viz() -> VizConfig {
    VizConfig {
        image_size: 8,
        channels: 3,
        patch: 2,
        enc_dim: 8,
        grid: 2,
        model_dim: DIM,
        blocks: 1,
        heads: 2,
    }
}

pub fn tiny_lm() -> LmConfig {
    LmConfig {
        vocab_size: VOCAB,
        dim: DIM,
        layers: 1,
        heads: 2,
        max_len: 32,
        mlp_mult: 2,
    }
}

pub fn tiny_model<T: Real>(seed: u64) -> Model<T> {
    let mut rng = seeded(seed);
    Model {
        encoder: Encoder::new(tiny_viz(), &mut rng).unwrap(),
        lm: Lm::new(tiny_lm(), &mut rng).unwrap(),
    }
}

pub fn image(seed: u64) -> ImageTensor {
    let mut rng = seeded(seed);
    ImageTensor::from_vec(8, 8, 3, (0..192).map(|_| rng.random::<f32>()).collect())
}

/// `t0 t3 t4 [t1] v v v v [t2] t5 t6 t0`-style sample with both masks set.
pub fn mixed_sample() -> SequenceSample {
    let t = |i: u32| Element::Token(TokenId(i));
    let v = |p: u32| Element::Visual { image: 0, pos: p };
    let elements = vec![t(0), t(3), t(4), t(1), v(0), v(1), v(2), v(3), t(2), t(5), t(6), t(7)];
    let text_mask = vec![false, false, true, true, false, false, false, false, true, true, true, true];
    let visual_mask = vec![false, false, false, false, true, true, true, true, false, false, false, false];
    SequenceSample {
        elements,
        images: vec![image(99)],
        text_mask,
        visual_mask,
        meta: SampleMeta { template: Template::Pair, seed: 0 },
    }
}

pub fn targets(seed: u64, rows: usize) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..rows * DIM).map(|_| rng.random::<f64>() - 0.5).collect()
}
