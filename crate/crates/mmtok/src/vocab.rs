//! Bidirectional token table: corpus words first, then the fixed special
//! block, then the 225 loc tokens.

use std::collections::HashMap;
use std::fmt;

use crate::error::TokError;

/// Number of coordinate bins; tokens run `<loc_000>` … `<loc_224>`.
pub const NUM_LOC: usize = 225;

/// Non-textual markers, in their fixed vocabulary order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Special {
    Bos,
    Eos,
    Img,
    ImgEnd,
    Video,
    Coor,
    CoorEnd,
    Phrase,
    PhraseEnd,
    Grounding,
    User,
    Assistant,
}

impl Special {
    pub const ALL: [Special; 12] = [
        Special::Bos,
        Special::Eos,
        Special::Img,
        Special::ImgEnd,
        Special::Video,
        Special::Coor,
        Special::CoorEnd,
        Special::Phrase,
        Special::PhraseEnd,
        Special::Grounding,
        Special::User,
        Special::Assistant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Special::Bos => "<s>",
            Special::Eos => "</s>",
            Special::Img => "[IMG]",
            Special::ImgEnd => "[/IMG]",
            Special::Video => "[VIDEO]",
            Special::Coor => "<coor>",
            Special::CoorEnd => "</coor>",
            Special::Phrase => "<p>",
            Special::PhraseEnd => "</p>",
            Special::Grounding => "<grounding>",
            Special::User => "[USER]",
            Special::Assistant => "[ASSISTANT]",
        }
    }

    fn offset(self) -> usize {
        Special::ALL.iter().position(|&s| s == self).expect("listed")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn loc_token(i: usize) -> String {
    format!("<loc_{i:03}>")
}

fn is_reserved(word: &str) -> bool {
    Special::ALL.iter().any(|s| s.as_str() == word)
        || (word.starts_with("<loc_") && word.ends_with('>'))
        || (word.starts_with("<v:") && word.ends_with('>'))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, TokenId>,
    num_words: usize,
}

impl Vocab {
    /// Words take ids `0..W`; specials follow in [`Special::ALL`] order, then
    /// loc tokens in index order.
    pub fn build<S: AsRef<str>>(words: &[S]) -> Result<Self, TokError> {
        if words.is_empty() {
            return Err(TokError::EmptyWordList);
        }
        let mut entries: Vec<String> = Vec::with_capacity(words.len() + 12 + NUM_LOC);
        let mut index = HashMap::new();
        for w in words {
            let w = w.as_ref();
            if is_reserved(w) {
                return Err(TokError::ReservedWord(w.to_string()));
            }
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(TokError::Record(format!("word `{w}` is empty or has whitespace")));
            }
            if index
                .insert(w.to_string(), TokenId(entries.len() as u32))
                .is_some()
            {
                return Err(TokError::DuplicateWord(w.to_string()));
            }
            entries.push(w.to_string());
        }
        let num_words = entries.len();
        let tail = Special::ALL
            .iter()
            .map(|s| s.as_str().to_string())
            .chain((0..NUM_LOC).map(loc_token));
        for tok in tail {
            index.insert(tok.clone(), TokenId(entries.len() as u32));
            entries.push(tok);
        }
        Ok(Self {
            entries,
            index,
            num_words,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_words(&self) -> usize {
        self.num_words
    }

    pub fn words(&self) -> &[String] {
        &self.entries[..self.num_words]
    }

    pub fn id(&self, token: &str) -> Result<TokenId, TokError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| TokError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> Result<&str, TokError> {
        self.entries
            .get(id.index())
            .map(String::as_str)
            .ok_or(TokError::UnknownId(id.0))
    }

    pub fn special(&self, s: Special) -> TokenId {
        TokenId((self.num_words + s.offset()) as u32)
    }

    pub fn loc(&self, i: usize) -> Result<TokenId, TokError> {
        if i >= NUM_LOC {
            return Err(TokError::LocOutOfRange(i));
        }
        Ok(TokenId((self.num_words + Special::ALL.len() + i) as u32))
    }

    /// Loc index for a loc token id, if it is one.
    pub fn loc_index(&self, id: TokenId) -> Option<usize> {
        let base = self.num_words + Special::ALL.len();
        (id.index() >= base && id.index() < base + NUM_LOC).then(|| id.index() - base)
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id.index() >= self.num_words
    }

    /// Whitespace word splitting with every ASCII punctuation character as its
    /// own token. Every piece must already be in the vocabulary.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, TokError> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let mut word = String::new();
            for ch in chunk.chars() {
                if ch.is_ascii_punctuation() {
                    if !word.is_empty() {
                        out.push(self.id(&word)?);
                        word.clear();
                    }
                    out.push(self.id(&ch.to_string())?);
                } else {
                    word.push(ch);
                }
            }
            if !word.is_empty() {
                out.push(self.id(&word)?);
            }
        }
        Ok(out)
    }

    /// Space-joined token strings.
    pub fn render(&self, ids: &[TokenId]) -> Result<String, TokError> {
        let parts = ids
            .iter()
            .map(|&id| self.token(id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(parts.join(" "))
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.entries.join("\n");
        s.push('\n');
        s
    }

    /// Parses [`Vocab::to_text`] output and checks the fixed tail layout.
    pub fn from_text(text: &str) -> Result<Self, TokError> {
        let lines: Vec<&str> = text.lines().collect();
        let tail = Special::ALL.len() + NUM_LOC;
        if lines.len() <= tail {
            return Err(TokError::Record("vocabulary file too short".into()));
        }
        let words = &lines[..lines.len() - tail];
        let vocab = Self::build(words)?;
        if vocab.entries.iter().map(String::as_str).ne(lines.iter().copied()) {
            return Err(TokError::Record(
                "special/loc block out of canonical order".into(),
            ));
        }
        Ok(vocab)
    }
}
