//! Vocabulary, coordinate quantization, and the multimodal sequence formats
//! with their loss masks.

pub mod coords;
pub mod error;
pub mod sample;
pub mod templates;
pub mod vocab;

pub use coords::{dequantize_coord, quantize_coord, render_localization_image, BBox};
pub use error::TokError;
pub use sample::{Element, SampleMeta, SequenceSample, Template};
pub use templates::{
    encode_chat, encode_document, encode_gen, encode_grounded, encode_interleaved, encode_pair, encode_prompt,
    encode_video, ChatTurn, DocBlock, FormatConfig, GenEntity, GroundedPhrase, InstructionPart,
    Supervision,
};
pub use vocab::{loc_token, Special, TokenId, Vocab, NUM_LOC};
