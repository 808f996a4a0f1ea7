#![allow(dead_code)]

use mmgen_core::ImageTensor;
use mmgen_mmtok::*;

pub const FIXTURE: &str = "tests/fixtures/templates.tsv";

pub const SLOTS: usize = 4;

pub fn vocab() -> Vocab {
    let words = [
        "a", "the", "red", "green", "blue", "cat", "dog", "bird", "sits", "runs", "on", "mat",
        "what", "color", "is", "it", "yes", "no", "you", "are", "helpful", "describe", "image",
        "?", ":", ".", ",",
    ];
    Vocab::build(&words).unwrap()
}

pub fn ids(v: &Vocab, text: &str) -> Vec<TokenId> {
    v.tokenize(text).unwrap()
}

pub fn cfg(supervision: Supervision) -> FormatConfig {
    FormatConfig {
        slots_per_image: SLOTS,
        max_len: 1024,
        supervision,
        loc_image_size: 8,
    }
}

pub fn img(level: f32) -> ImageTensor {
    ImageTensor::filled(2, 2, 3, level)
}

/// One sample per template, covering loc endpoints and a two-turn chat.
pub fn golden_samples() -> Vec<SequenceSample> {
    let v = vocab();
    let full = cfg(Supervision::Full);
    let mut out = Vec::new();
    out.push(encode_pair(&v, cfg(Supervision::Captioning), img(0.1), &ids(&v, "a red cat ."), 7).unwrap());
    out.push(encode_pair(&v, full, img(0.1), &ids(&v, "a red cat ."), 7).unwrap());
    out.push(encode_pair(&v, full, img(0.1), &ids(&v, "a red cat ."), 8).unwrap());
    let doc = vec![
        DocBlock { image: Some(img(0.2)), text: ids(&v, "a dog runs .") },
        DocBlock { image: None, text: ids(&v, "the bird sits .") },
        DocBlock { image: Some(img(0.3)), text: ids(&v, "a cat on a mat .") },
    ];
    out.push(encode_interleaved(&v, full, &doc, 11).unwrap());
    out.push(encode_video(&v, full, vec![img(0.4), img(0.5)], &ids(&v, "a bird ."), 13).unwrap());
    let phrases = vec![
        GroundedPhrase { phrase: ids(&v, "a cat"), bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap() },
        GroundedPhrase { phrase: ids(&v, "the mat"), bbox: BBox::new(0.25, 0.5, 0.75, 1.0).unwrap() },
    ];
    out.push(encode_grounded(&v, full, img(0.6), &phrases, 17).unwrap());
    let ent = GenEntity {
        phrase: ids(&v, "a dog"),
        subject: img(0.7),
        bbox: BBox::new(0.1, 0.2, 0.5, 0.9).unwrap(),
    };
    out.push(encode_gen(&v, full, &ids(&v, "a dog on a mat"), &[ent], img(0.8), 0.0, 19).unwrap());
    let turns = vec![
        ChatTurn {
            instruction: vec![
                InstructionPart::Image(img(0.9)),
                InstructionPart::Text(ids(&v, "what color is it ?")),
            ],
            answer: ids(&v, "red"),
        },
        ChatTurn {
            instruction: vec![InstructionPart::Text(ids(&v, "is it a cat ?"))],
            answer: ids(&v, "yes ."),
        },
    ];
    out.push(encode_chat(&v, full, &ids(&v, "you are helpful ."), &turns, 23).unwrap());
    out
}

/// The fixture text for [`golden_samples`].
pub fn golden_records() -> String {
    let v = vocab();
    golden_samples()
        .iter()
        .map(|s| s.to_record(&v).unwrap() + "\n")
        .collect()
}
