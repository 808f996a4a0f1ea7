//! The training-sequence templates.
//!
//! Every encoder is a pure function of its inputs and a seed; the seed is
//! recorded in the sample's metadata.

use mmgen_core::{seeded, DetRng, ImageTensor};
use rand::seq::index;
use rand::Rng;

use crate::coords::{render_localization_image, BBox};
use crate::error::TokError;
use crate::sample::{SampleBuilder, SampleMeta, SequenceSample, Template};
use crate::vocab::{Special, TokenId, Vocab};

pub const PLACEMENT_PROB: f64 = 0.5;
pub const PHRASE_FIRST_PROB: f64 = 0.7;
pub const MAX_INTERLEAVED_IMAGES: usize = 8;
pub const MAX_VIDEO_FRAMES: usize = 16;

/// Which losses a sample carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Supervision {
    /// Cross-entropy on text only; no regression.
    Captioning,
    /// Cross-entropy on text and image markers, regression on visual slots.
    Full,
}

impl Supervision {
    fn regress(self) -> bool {
        self == Supervision::Full
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FormatConfig {
    /// Visual slots per image.
    pub slots_per_image: usize,
    pub max_len: usize,
    pub supervision: Supervision,
    /// Canvas size for rendered localization images.
    pub loc_image_size: usize,
}

impl Default for FormatConfig {
    fn default() -> Self {
        Self {
            slots_per_image: 64,
            max_len: 1024,
            supervision: Supervision::Full,
            loc_image_size: 32,
        }
    }
}

/// One block of an interleaved document.
#[derive(Clone, Debug, PartialEq)]
pub struct DocBlock {
    pub image: Option<ImageTensor>,
    pub text: Vec<TokenId>,
}

/// A grounded phrase with its box.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundedPhrase {
    pub phrase: Vec<TokenId>,
    pub bbox: BBox,
}

/// An entity of a controllable-generation sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GenEntity {
    pub phrase: Vec<TokenId>,
    pub subject: ImageTensor,
    pub bbox: BBox,
}

/// A piece of a chat instruction or an evaluation prompt.
#[derive(Clone, Debug, PartialEq)]
pub enum InstructionPart {
    Text(Vec<TokenId>),
    Image(ImageTensor),
    Video(Vec<ImageTensor>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatTurn {
    pub instruction: Vec<InstructionPart>,
    pub answer: Vec<TokenId>,
}

struct Encoder<'a> {
    vocab: &'a Vocab,
    cfg: FormatConfig,
    out: SampleBuilder,
}

impl<'a> Encoder<'a> {
    fn new(vocab: &'a Vocab, cfg: FormatConfig) -> Self {
        let mut out = SampleBuilder::new(cfg.slots_per_image);
        out.token(vocab.special(Special::Bos), false);
        Self { vocab, cfg, out }
    }

    fn special(&mut self, s: Special, supervised: bool) {
        self.out.token(self.vocab.special(s), supervised);
    }

    fn text(&mut self, ids: &[TokenId]) {
        self.out.tokens(ids, true);
    }

    fn image(&mut self, image: ImageTensor) {
        let full = self.cfg.supervision.regress();
        self.out.image(self.vocab, image, full, full);
    }

    fn video(&mut self, frames: Vec<ImageTensor>) {
        self.special(Special::Video, self.cfg.supervision.regress());
        for f in frames {
            self.image(f);
        }
    }

    fn finish(mut self, template: Template, seed: u64) -> Result<SequenceSample, TokError> {
        self.special(Special::Eos, true);
        self.out.finish(SampleMeta { template, seed }, self.cfg.max_len)
    }
}

fn non_empty(ids: &[TokenId], what: &'static str) -> Result<(), TokError> {
    if ids.is_empty() {
        Err(TokError::Empty(what))
    } else {
        Ok(())
    }
}

/// Image before caption in captioning mode; either order with equal
/// probability in full mode.
pub fn encode_pair(
    vocab: &Vocab,
    cfg: FormatConfig,
    image: ImageTensor,
    caption: &[TokenId],
    seed: u64,
) -> Result<SequenceSample, TokError> {
    non_empty(caption, "caption")?;
    let mut rng = seeded(seed);
    let mut enc = Encoder::new(vocab, cfg);
    let image_first = match cfg.supervision {
        Supervision::Captioning => true,
        Supervision::Full => rng.random_bool(PLACEMENT_PROB),
    };
    if image_first {
        enc.image(image);
        enc.text(caption);
    } else {
        enc.text(caption);
        enc.image(image);
    }
    enc.finish(Template::Pair, seed)
}

/// Keeps at most eight image blocks (sampled uniformly, order preserved),
/// drops the other image blocks, and truncates at a block boundary.
pub fn encode_interleaved(
    vocab: &Vocab,
    cfg: FormatConfig,
    doc: &[DocBlock],
    seed: u64,
) -> Result<SequenceSample, TokError> {
    if doc.is_empty() {
        return Err(TokError::Empty("document"));
    }
    let mut rng = seeded(seed);
    let with_image: Vec<usize> = (0..doc.len()).filter(|&i| doc[i].image.is_some()).collect();
    let mut keep = vec![true; doc.len()];
    if with_image.len() > MAX_INTERLEAVED_IMAGES {
        keep = vec![false; doc.len()];
        for (i, _) in doc.iter().enumerate().filter(|(_, b)| b.image.is_none()) {
            keep[i] = true;
        }
        for k in index::sample(&mut rng, with_image.len(), MAX_INTERLEAVED_IMAGES) {
            keep[with_image[k]] = true;
        }
    }
    let mut enc = Encoder::new(vocab, cfg);
    let slot_cost = cfg.slots_per_image + 2;
    for (block, _) in doc.iter().zip(&keep).filter(|(_, &k)| k) {
        let cost = block.text.len() + block.image.as_ref().map_or(0, |_| slot_cost);
        if enc.out.len() + cost + 1 > cfg.max_len {
            break;
        }
        match &block.image {
            Some(img) => {
                if rng.random_bool(PLACEMENT_PROB) {
                    enc.image(img.clone());
                    enc.text(&block.text);
                } else {
                    enc.text(&block.text);
                    enc.image(img.clone());
                }
            }
            None => enc.text(&block.text),
        }
    }
    enc.finish(Template::Interleaved, seed)
}

/// An interleaved document kept whole and in order, each block's image ahead
/// of its text. Used for episodes whose layout carries meaning, such as
/// few-shot exemplars; errors instead of truncating.
pub fn encode_document(
    vocab: &Vocab,
    cfg: FormatConfig,
    doc: &[DocBlock],
    seed: u64,
) -> Result<SequenceSample, TokError> {
    if doc.is_empty() {
        return Err(TokError::Empty("document"));
    }
    let mut enc = Encoder::new(vocab, cfg);
    for block in doc {
        if let Some(img) = &block.image {
            enc.image(img.clone());
        }
        enc.text(&block.text);
    }
    enc.finish(Template::Interleaved, seed)
}

pub fn encode_video(
    vocab: &Vocab,
    cfg: FormatConfig,
    frames: Vec<ImageTensor>,
    text: &[TokenId],
    seed: u64,
) -> Result<SequenceSample, TokError> {
    if frames.is_empty() || frames.len() > MAX_VIDEO_FRAMES {
        return Err(TokError::FrameCount(frames.len()));
    }
    non_empty(text, "video text")?;
    let mut rng = seeded(seed);
    let mut enc = Encoder::new(vocab, cfg);
    if rng.random_bool(PLACEMENT_PROB) {
        enc.video(frames);
        enc.text(text);
    } else {
        enc.text(text);
        enc.video(frames);
    }
    enc.finish(Template::Video, seed)
}

/// `<s><grounding>` followed by the image and the grounded phrases in either
/// order; each phrase precedes its coordinates with probability 0.7.
pub fn encode_grounded(
    vocab: &Vocab,
    cfg: FormatConfig,
    image: ImageTensor,
    phrases: &[GroundedPhrase],
    seed: u64,
) -> Result<SequenceSample, TokError> {
    if phrases.is_empty() {
        return Err(TokError::Empty("phrase list"));
    }
    let mut rng = seeded(seed);
    let mut text = Vec::new();
    for p in phrases {
        non_empty(&p.phrase, "phrase")?;
        let phrase_block = {
            let mut b = vec![vocab.special(Special::Phrase)];
            b.extend_from_slice(&p.phrase);
            b.push(vocab.special(Special::PhraseEnd));
            b
        };
        let mut coor_block = vec![vocab.special(Special::Coor)];
        for q in p.bbox.quantized()? {
            coor_block.push(vocab.loc(q)?);
        }
        coor_block.push(vocab.special(Special::CoorEnd));
        if rng.random_bool(PHRASE_FIRST_PROB) {
            text.extend(phrase_block);
            text.extend(coor_block);
        } else {
            text.extend(coor_block);
            text.extend(phrase_block);
        }
    }
    let mut enc = Encoder::new(vocab, cfg);
    enc.special(Special::Grounding, false);
    if rng.random_bool(PLACEMENT_PROB) {
        enc.image(image);
        enc.text(&text);
    } else {
        enc.text(&text);
        enc.image(image);
    }
    enc.finish(Template::Grounded, seed)
}

/// `<s> caption`, then per entity an optional phrase block, an optional
/// localization block holding a rendered box image, and the subject image,
/// then the target image. Only the target image is regressed.
pub fn encode_gen(
    vocab: &Vocab,
    cfg: FormatConfig,
    caption: &[TokenId],
    entities: &[GenEntity],
    target: ImageTensor,
    drop_prob: f64,
    seed: u64,
) -> Result<SequenceSample, TokError> {
    if !(0.0..=1.0).contains(&drop_prob) {
        return Err(TokError::Probability(drop_prob));
    }
    let mut rng: DetRng = seeded(seed);
    let mut out = SampleBuilder::new(cfg.slots_per_image);
    out.token(vocab.special(Special::Bos), false);
    out.tokens(caption, true);
    for e in entities {
        let keep_phrase = !rng.random_bool(drop_prob);
        let keep_loc = !rng.random_bool(drop_prob);
        if keep_phrase {
            out.token(vocab.special(Special::Phrase), true);
            out.tokens(&e.phrase, true);
            out.token(vocab.special(Special::PhraseEnd), true);
        }
        if keep_loc {
            let loc = render_localization_image(&[e.bbox], cfg.loc_image_size)?;
            out.token(vocab.special(Special::Coor), true);
            out.image(vocab, loc, true, false);
            out.token(vocab.special(Special::CoorEnd), true);
        }
        out.image(vocab, e.subject.clone(), true, false);
    }
    out.image(vocab, target, true, true);
    out.token(vocab.special(Special::Eos), true);
    out.finish(
        SampleMeta {
            template: Template::Gen,
            seed,
        },
        cfg.max_len,
    )
}

/// `<s> system [USER] : instruction [ASSISTANT] : answer </s>` per turn; only
/// answers and their `</s>` are supervised, nothing is regressed.
pub fn encode_chat(
    vocab: &Vocab,
    cfg: FormatConfig,
    system: &[TokenId],
    turns: &[ChatTurn],
    seed: u64,
) -> Result<SequenceSample, TokError> {
    if turns.is_empty() {
        return Err(TokError::Empty("dialogue"));
    }
    let colon = vocab.id(":")?;
    let mut out = SampleBuilder::new(cfg.slots_per_image);
    out.token(vocab.special(Special::Bos), false);
    out.tokens(system, false);
    for turn in turns {
        non_empty(&turn.answer, "answer")?;
        out.token(vocab.special(Special::User), false);
        out.token(colon, false);
        push_parts(&mut out, vocab, &turn.instruction);
        out.token(vocab.special(Special::Assistant), false);
        out.token(colon, false);
        out.tokens(&turn.answer, true);
        out.token(vocab.special(Special::Eos), true);
    }
    out.finish(
        SampleMeta {
            template: Template::Chat,
            seed,
        },
        cfg.max_len,
    )
}

/// An unsupervised, open-ended prompt: `<s>` then the parts, no `</s>`.
pub fn encode_prompt(
    vocab: &Vocab,
    cfg: FormatConfig,
    parts: &[InstructionPart],
) -> Result<SequenceSample, TokError> {
    let mut out = SampleBuilder::new(cfg.slots_per_image);
    out.token(vocab.special(Special::Bos), false);
    push_parts(&mut out, vocab, parts);
    out.finish(
        SampleMeta {
            template: Template::Prompt,
            seed: 0,
        },
        cfg.max_len,
    )
}

fn push_parts(out: &mut SampleBuilder, vocab: &Vocab, parts: &[InstructionPart]) {
    for part in parts {
        match part {
            InstructionPart::Text(ids) => out.tokens(ids, false),
            InstructionPart::Image(img) => out.image(vocab, img.clone(), false, false),
            InstructionPart::Video(frames) => {
                out.token(vocab.special(Special::Video), false);
                for f in frames {
                    out.image(vocab, f.clone(), false, false);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(&["a", "red", "cat", "dog", "yes", "is", "it", "?", ":", "."]).unwrap()
    }

    fn ids(v: &Vocab, text: &str) -> Vec<TokenId> {
        v.tokenize(text).unwrap()
    }

    fn cfg(supervision: Supervision) -> FormatConfig {
        FormatConfig {
            slots_per_image: 4,
            max_len: 1024,
            supervision,
            loc_image_size: 8,
        }
    }

    fn img() -> ImageTensor {
        ImageTensor::black(2, 2, 3)
    }

    #[test]
    fn captioning_pair_puts_image_first_and_never_regresses() {
        let v = vocab();
        for seed in 0..50 {
            let s = encode_pair(&v, cfg(Supervision::Captioning), img(), &ids(&v, "a red cat"), seed)
                .unwrap();
            s.validate(&v, 4).unwrap();
            assert_eq!(s.elements[1], crate::Element::Token(v.special(Special::Img)));
            assert_eq!(s.visual_targets(), 0);
            // caption plus `</s>`
            assert_eq!(s.text_targets(), 4);
        }
    }

    #[test]
    fn full_pair_regresses_every_slot() {
        let v = vocab();
        let s = encode_pair(&v, cfg(Supervision::Full), img(), &ids(&v, "a cat"), 3).unwrap();
        assert_eq!(s.visual_targets(), 4);
        assert_eq!(s.text_targets(), 2 + 2 + 1);
    }

    #[test]
    fn pair_rejects_empty_and_oversized_captions() {
        let v = vocab();
        let c = cfg(Supervision::Full);
        assert_eq!(encode_pair(&v, c, img(), &[], 0), Err(TokError::Empty("caption")));
        // `<s>`, `[IMG]`, `[/IMG]`, `</s>` and four slots
        let long = vec![v.id("cat").unwrap(); 1024 - 8 + 1];
        assert!(matches!(
            encode_pair(&v, c, img(), &long, 0),
            Err(TokError::TooLong { .. })
        ));
        let fits = vec![v.id("cat").unwrap(); 1024 - 8];
        assert_eq!(encode_pair(&v, c, img(), &fits, 0).unwrap().len(), 1024);
    }

    #[test]
    fn interleaved_caps_images_at_eight_in_order() {
        let v = vocab();
        let doc: Vec<DocBlock> = (0..12)
            .map(|i| DocBlock {
                image: Some(ImageTensor::filled(2, 2, 3, i as f32 / 12.0)),
                text: ids(&v, "a cat ."),
            })
            .collect();
        let s = encode_interleaved(&v, cfg(Supervision::Full), &doc, 9).unwrap();
        s.validate(&v, 4).unwrap();
        assert_eq!(s.image_runs(&v), 8);
        let order: Vec<f32> = s.images.iter().map(|im| im.data[0]).collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn interleaved_truncates_at_block_boundary() {
        let v = vocab();
        let c = FormatConfig {
            max_len: 40,
            ..cfg(Supervision::Full)
        };
        let doc: Vec<DocBlock> = (0..5)
            .map(|_| DocBlock {
                image: Some(img()),
                text: ids(&v, "a red cat ."),
            })
            .collect();
        let s = encode_interleaved(&v, c, &doc, 1).unwrap();
        s.validate(&v, 4).unwrap();
        // each block costs 4 + 6 = 10; `<s>` and `</s>` leave room for three
        assert_eq!(s.image_runs(&v), 3);
        assert_eq!(s.len(), 32);
    }

    #[test]
    fn video_has_one_marker_and_one_run_per_frame() {
        let v = vocab();
        for t in [1, 3] {
            let s = encode_video(&v, cfg(Supervision::Full), vec![img(); t], &ids(&v, "a dog"), 5)
                .unwrap();
            s.validate(&v, 4).unwrap();
            assert_eq!(s.count_token(v.special(Special::Video)), 1);
            assert_eq!(s.image_runs(&v), t);
        }
        assert_eq!(
            encode_video(&v, cfg(Supervision::Full), vec![], &ids(&v, "a"), 0),
            Err(TokError::FrameCount(0))
        );
    }

    #[test]
    fn grounded_full_box_uses_extreme_loc_tokens() {
        let v = vocab();
        let p = GroundedPhrase {
            phrase: ids(&v, "a cat"),
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
        };
        let s = encode_grounded(&v, cfg(Supervision::Full), img(), &[p], 2).unwrap();
        s.validate(&v, 4).unwrap();
        assert_eq!(s.elements[1], crate::Element::Token(v.special(Special::Grounding)));
        let locs: Vec<usize> = s
            .elements
            .iter()
            .filter_map(|e| e.token().and_then(|t| v.loc_index(t)))
            .collect();
        assert_eq!(locs, vec![0, 0, 224, 224]);
    }

    #[test]
    fn gen_regresses_only_the_target() {
        let v = vocab();
        let ent = GenEntity {
            phrase: ids(&v, "cat"),
            subject: img(),
            bbox: BBox::new(0.1, 0.1, 0.6, 0.9).unwrap(),
        };
        let c = cfg(Supervision::Full);
        let s = encode_gen(&v, c, &ids(&v, "a"), std::slice::from_ref(&ent), img(), 0.0, 4).unwrap();
        s.validate(&v, 4).unwrap();
        assert_eq!(s.visual_targets(), 4);
        assert_eq!(s.image_runs(&v), 3);
        let last_run = s.len() - 1 - 4 - 1;
        assert!(s.visual_mask[last_run + 1..s.len() - 2].iter().all(|&m| m));
        assert_eq!(s.count_token(v.special(Special::Phrase)), 1);
        assert_eq!(s.count_token(v.special(Special::Coor)), 1);
        // every token after `<s>` is a target
        let tokens = s.elements.iter().filter(|e| !e.is_visual()).count();
        assert_eq!(s.text_targets(), tokens - 1);

        let dropped = encode_gen(&v, c, &ids(&v, "a"), &[ent], img(), 1.0, 4).unwrap();
        assert_eq!(dropped.count_token(v.special(Special::Phrase)), 0);
        assert_eq!(dropped.count_token(v.special(Special::Coor)), 0);
        assert_eq!(dropped.image_runs(&v), 2);
        assert_eq!(dropped.visual_targets(), 4);
    }

    #[test]
    fn gen_without_entities_is_text_to_image() {
        let v = vocab();
        let s = encode_gen(&v, cfg(Supervision::Full), &ids(&v, "a red cat"), &[], img(), 0.5, 0)
            .unwrap();
        let text = s.render_tokens(&v).unwrap();
        assert_eq!(
            text,
            "<s> a red cat [IMG] <v:0:0> <v:0:1> <v:0:2> <v:0:3> [/IMG] </s>"
        );
    }

    #[test]
    fn chat_supervises_only_answers() {
        let v = vocab();
        let turn = ChatTurn {
            instruction: vec![
                InstructionPart::Image(img()),
                InstructionPart::Text(ids(&v, "is it a cat ?")),
            ],
            answer: ids(&v, "yes"),
        };
        let s = encode_chat(&v, cfg(Supervision::Full), &ids(&v, "a"), std::slice::from_ref(&turn), 0).unwrap();
        s.validate(&v, 4).unwrap();
        assert_eq!(s.text_targets(), 2);
        assert_eq!(s.supervised_tokens(), vec![v.id("yes").unwrap(), v.special(Special::Eos)]);
        assert_eq!(s.visual_targets(), 0);
        let empty = ChatTurn {
            answer: vec![],
            ..turn
        };
        assert_eq!(
            encode_chat(&v, cfg(Supervision::Full), &[], &[empty], 0),
            Err(TokError::Empty("answer"))
        );
    }

    #[test]
    fn prompt_is_open_and_unsupervised() {
        let v = vocab();
        let s = encode_prompt(
            &v,
            cfg(Supervision::Full),
            &[InstructionPart::Image(img()), InstructionPart::Text(ids(&v, "cat :"))],
        )
        .unwrap();
        s.validate(&v, 4).unwrap();
        assert_eq!(s.text_targets() + s.visual_targets(), 0);
        assert_ne!(s.elements.last(), Some(&crate::Element::Token(v.special(Special::Eos))));
    }

    #[test]
    fn document_keeps_every_block_in_order() {
        let v = vocab();
        let doc: Vec<DocBlock> = (0..10)
            .map(|i| DocBlock {
                image: (i % 3 != 2).then(img),
                text: ids(&v, "a red cat ."),
            })
            .collect();
        let s = encode_document(&v, cfg(Supervision::Captioning), &doc, 0).unwrap();
        s.validate(&v, 4).unwrap();
        assert_eq!(s.meta.template, Template::Interleaved);
        assert_eq!(s.image_runs(&v), 7);
        let mut expect = vec![v.special(Special::Bos)];
        for b in &doc {
            if b.image.is_some() {
                expect.extend([v.special(Special::Img), v.special(Special::ImgEnd)]);
            }
            expect.extend(&b.text);
        }
        expect.push(v.special(Special::Eos));
        let tokens: Vec<TokenId> = s.elements.iter().filter_map(|e| e.token()).collect();
        assert_eq!(tokens, expect);
        let tight = FormatConfig { max_len: s.len() - 1, ..cfg(Supervision::Captioning) };
        assert!(matches!(encode_document(&v, tight, &doc, 0), Err(TokError::TooLong { .. })));
    }
}
