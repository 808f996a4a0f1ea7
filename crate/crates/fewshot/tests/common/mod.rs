#![allow(dead_code)]

use mmgen_core::{seeded, ImageTensor};
use mmgen_fewshot::{build_prompt, EvalItem, ShotConfig};
use mmgen_mmlm::{Lm, LmConfig, Model};
use mmgen_mmtok::{FormatConfig, Supervision, Vocab};
use mmgen_viztok::{Encoder, VizConfig};
use rand::Rng;

pub const SLOTS: usize = 4;

pub fn vocab() -> Vocab {
    let words = [
        "based", "on", "the", "picture", "answer", "in", "one", "word", "or", "phrase", "short",
        "what", "color", "is", "square", "circle", "red", "blue", "green", "?", ":", ".", ",",
    ];
    Vocab::build(&words).unwrap()
}

pub fn fmt() -> FormatConfig {
    FormatConfig {
        slots_per_image: SLOTS,
        max_len: 4096,
        supervision: Supervision::Captioning,
        loc_image_size: 8,
    }
}

pub fn image(seed: u64) -> ImageTensor {
    let mut rng = seeded(seed);
    ImageTensor::from_vec(8, 8, 3, (0..192).map(|_| rng.random::<f32>()).collect())
}

pub fn item(seed: u64, shape: &str, answer: &str) -> EvalItem {
    EvalItem {
        image: image(seed),
        question: format!("what color is the {shape} ?"),
        answer: answer.to_string(),
    }
}

pub fn tiny_model(seed: u64, vocab_size: usize, max_len: usize) -> Model<f32> {
    let mut rng = seeded(seed);
    let viz = VizConfig {
        image_size: 8,
        channels: 3,
        patch: 2,
        enc_dim: 8,
        grid: 2,
        model_dim: 8,
        blocks: 1,
        heads: 2,
    };
    let lm = LmConfig {
        vocab_size,
        dim: 8,
        layers: 1,
        heads: 2,
        max_len,
        mlp_mult: 2,
    };
    Model {
        encoder: Encoder::new(viz, &mut rng).unwrap(),
        lm: Lm::new(lm, &mut rng).unwrap(),
    }
}

/// Zero-, one- and three-shot prompts over a fixed pool, as fixture text.
pub fn golden_prompts() -> String {
    let v = vocab();
    let pool = [item(1, "square", "red"), item(2, "circle", "blue"), item(3, "square", "green")];
    let q = item(4, "circle", "red");
    let mut got = String::new();
    for k in [0, 1, 3] {
        let refs: Vec<&EvalItem> = pool.iter().take(k).collect();
        let p = build_prompt(&v, fmt(), &refs, &q, &ShotConfig::new(k)).unwrap();
        got.push_str(&p.to_record(&v).unwrap());
        got.push('\n');
    }
    got
}
