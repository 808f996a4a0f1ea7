//! Multimodal sequences, their loss masks, and the line-oriented fixture
//! record format.
//!
//! A record is one line with five tab-separated fields:
//!
//! ```text
//! template <TAB> seed <TAB> tokens <TAB> text_mask <TAB> visual_mask
//! ```
//!
//! `tokens` is the space-separated token-string form, with visual slots
//! written `<v:IMAGE:POS>`; the masks are `0`/`1` strings of the same length.

use std::fmt;
use std::str::FromStr;

use mmgen_core::ImageTensor;

use crate::error::TokError;
use crate::vocab::{Special, TokenId, Vocab};

/// One position of a multimodal sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Element {
    Token(TokenId),
    /// Slot `pos` of image `image` in the sample's image list.
    Visual { image: u32, pos: u32 },
}

impl Element {
    pub fn token(self) -> Option<TokenId> {
        match self {
            Element::Token(t) => Some(t),
            Element::Visual { .. } => None,
        }
    }

    pub fn is_visual(self) -> bool {
        matches!(self, Element::Visual { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Template {
    Pair,
    Interleaved,
    Video,
    Grounded,
    Gen,
    Chat,
    /// Few-shot evaluation prompt; ends with an open answer slot.
    Prompt,
}

impl Template {
    pub const ALL: [Template; 7] = [
        Template::Pair,
        Template::Interleaved,
        Template::Video,
        Template::Grounded,
        Template::Gen,
        Template::Chat,
        Template::Prompt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::Pair => "pair",
            Template::Interleaved => "interleaved",
            Template::Video => "video",
            Template::Grounded => "grounded",
            Template::Gen => "gen",
            Template::Chat => "chat",
            Template::Prompt => "prompt",
        }
    }

    /// Whether a complete sample ends in `</s>`.
    pub fn closed(self) -> bool {
        self != Template::Prompt
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = TokError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| TokError::Record(format!("unknown template `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleMeta {
    pub template: Template,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub elements: Vec<Element>,
    pub images: Vec<ImageTensor>,
    /// Cross-entropy applies at these positions.
    pub text_mask: Vec<bool>,
    /// Embedding regression applies at these positions.
    pub visual_mask: Vec<bool>,
    pub meta: SampleMeta,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn text_targets(&self) -> usize {
        self.text_mask.iter().filter(|&&m| m).count()
    }

    pub fn visual_targets(&self) -> usize {
        self.visual_mask.iter().filter(|&&m| m).count()
    }

    /// Number of `[IMG] … [/IMG]` runs.
    pub fn image_runs(&self, vocab: &Vocab) -> usize {
        let img = Element::Token(vocab.special(Special::Img));
        self.elements.iter().filter(|&&e| e == img).count()
    }

    pub fn count_token(&self, id: TokenId) -> usize {
        self.elements
            .iter()
            .filter(|&&e| e == Element::Token(id))
            .count()
    }

    /// Token ids of the positions where cross-entropy applies.
    pub fn supervised_tokens(&self) -> Vec<TokenId> {
        self.elements
            .iter()
            .zip(&self.text_mask)
            .filter(|(_, &m)| m)
            .filter_map(|(e, _)| e.token())
            .collect()
    }

    /// Checks every structural invariant: mask/kind agreement, framing, and
    /// `[IMG]`-bracketed runs of exactly `slots` visual positions covering the
    /// image list in order.
    pub fn validate(&self, vocab: &Vocab, slots: usize) -> Result<(), TokError> {
        let n = self.elements.len();
        let bad = |m: String| Err(TokError::Invariant(m));
        if self.text_mask.len() != n || self.visual_mask.len() != n {
            return bad("mask length differs from element count".into());
        }
        for (i, (&e, (&t, &v))) in self
            .elements
            .iter()
            .zip(self.text_mask.iter().zip(&self.visual_mask))
            .enumerate()
        {
            if t && v {
                return bad(format!("both masks set at {i}"));
            }
            if t && e.is_visual() {
                return bad(format!("text mask on visual slot {i}"));
            }
            if v && !e.is_visual() {
                return bad(format!("visual mask on token {i}"));
            }
        }
        let bos = Element::Token(vocab.special(Special::Bos));
        let eos = Element::Token(vocab.special(Special::Eos));
        let img = Element::Token(vocab.special(Special::Img));
        let img_end = Element::Token(vocab.special(Special::ImgEnd));
        if self.elements.first() != Some(&bos) {
            return bad("first element is not <s>".into());
        }
        if self.meta.template.closed() && self.elements.last() != Some(&eos) {
            return bad("last element is not </s>".into());
        }
        let mut next_image = 0u32;
        let mut i = 0;
        while i < n {
            match self.elements[i] {
                Element::Visual { .. } => return bad(format!("visual slot {i} outside a run")),
                e if e == img => {
                    for pos in 0..slots {
                        let want = Element::Visual {
                            image: next_image,
                            pos: pos as u32,
                        };
                        if self.elements.get(i + 1 + pos) != Some(&want) {
                            return bad(format!("run at {i} is not {slots} slots of image {next_image}"));
                        }
                    }
                    let close = i + 1 + slots;
                    match self.elements.get(close) {
                        Some(&e) if e == img_end => {}
                        // an open run may end a generation prefix
                        None if !self.meta.template.closed() => {}
                        _ => return bad(format!("run at {i} not closed by [/IMG]")),
                    }
                    next_image += 1;
                    i = close + 1;
                }
                _ => i += 1,
            }
        }
        if next_image as usize != self.images.len() && !self.images.is_empty() {
            return bad(format!(
                "{} runs but {} images",
                next_image,
                self.images.len()
            ));
        }
        Ok(())
    }

    /// Token-string form of the elements.
    pub fn render_tokens(&self, vocab: &Vocab) -> Result<String, TokError> {
        let parts = self
            .elements
            .iter()
            .map(|e| match *e {
                Element::Token(t) => vocab.token(t).map(str::to_string),
                Element::Visual { image, pos } => Ok(format!("<v:{image}:{pos}>")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(parts.join(" "))
    }

    pub fn to_record(&self, vocab: &Vocab) -> Result<String, TokError> {
        let bits = |m: &[bool]| m.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>();
        Ok(format!(
            "{}\t{}\t{}\t{}\t{}",
            self.meta.template,
            self.meta.seed,
            self.render_tokens(vocab)?,
            bits(&self.text_mask),
            bits(&self.visual_mask)
        ))
    }

    /// Inverse of [`SequenceSample::to_record`]. Images are not part of the
    /// record, so the parsed sample has an empty image list.
    pub fn from_record(line: &str, vocab: &Vocab) -> Result<Self, TokError> {
        let fields: Vec<&str> = line.trim_end_matches('\n').split('\t').collect();
        let [template, seed, tokens, text, visual] = fields[..] else {
            return Err(TokError::Record(format!(
                "expected 5 tab-separated fields, got {}",
                fields.len()
            )));
        };
        let template: Template = template.parse()?;
        let seed = seed
            .parse::<u64>()
            .map_err(|_| TokError::Record(format!("bad seed `{seed}`")))?;
        let elements = tokens
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(|t| parse_element(t, vocab))
            .collect::<Result<Vec<_>, _>>()?;
        let bits = |s: &str| -> Result<Vec<bool>, TokError> {
            s.chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(TokError::Record(format!("mask character `{c}`"))),
                })
                .collect()
        };
        let (text_mask, visual_mask) = (bits(text)?, bits(visual)?);
        if text_mask.len() != elements.len() || visual_mask.len() != elements.len() {
            return Err(TokError::Record("mask length differs from token count".into()));
        }
        Ok(Self {
            elements,
            images: Vec::new(),
            text_mask,
            visual_mask,
            meta: SampleMeta { template, seed },
        })
    }
}

fn parse_element(tok: &str, vocab: &Vocab) -> Result<Element, TokError> {
    if let Some(inner) = tok.strip_prefix("<v:").and_then(|t| t.strip_suffix('>')) {
        let (image, pos) = inner
            .split_once(':')
            .ok_or_else(|| TokError::Record(format!("bad visual slot `{tok}`")))?;
        let num = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| TokError::Record(format!("bad visual slot `{tok}`")))
        };
        return Ok(Element::Visual {
            image: num(image)?,
            pos: num(pos)?,
        });
    }
    vocab.id(tok).map(Element::Token)
}

/// Accumulates elements and masks while enforcing run structure.
pub(crate) struct SampleBuilder {
    slots: usize,
    elements: Vec<Element>,
    images: Vec<ImageTensor>,
    text_mask: Vec<bool>,
    visual_mask: Vec<bool>,
}

impl SampleBuilder {
    pub fn new(slots: usize) -> Self {
        Self {
            slots,
            elements: Vec::new(),
            images: Vec::new(),
            text_mask: Vec::new(),
            visual_mask: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn token(&mut self, id: TokenId, supervised: bool) {
        self.elements.push(Element::Token(id));
        self.text_mask.push(supervised);
        self.visual_mask.push(false);
    }

    pub fn tokens(&mut self, ids: &[TokenId], supervised: bool) {
        for &id in ids {
            self.token(id, supervised);
        }
    }

    /// `[IMG] v×N [/IMG]`.
    pub fn image(
        &mut self,
        vocab: &Vocab,
        image: ImageTensor,
        markers_supervised: bool,
        regress: bool,
    ) {
        let idx = self.images.len() as u32;
        self.images.push(image);
        self.token(vocab.special(Special::Img), markers_supervised);
        for pos in 0..self.slots {
            self.elements.push(Element::Visual {
                image: idx,
                pos: pos as u32,
            });
            self.text_mask.push(false);
            self.visual_mask.push(regress);
        }
        self.token(vocab.special(Special::ImgEnd), markers_supervised);
    }

    pub fn finish(self, meta: SampleMeta, max_len: usize) -> Result<SequenceSample, TokError> {
        if self.elements.len() > max_len {
            return Err(TokError::TooLong {
                len: self.elements.len(),
                max: max_len,
            });
        }
        Ok(SequenceSample {
            elements: self.elements,
            images: self.images,
            text_mask: self.text_mask,
            visual_mask: self.visual_mask,
            meta,
        })
    }
}
