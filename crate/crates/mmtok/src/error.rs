use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokError {
    #[error("duplicate word `{0}` in word list")]
    DuplicateWord(String),
    #[error("word `{0}` collides with a special token")]
    ReservedWord(String),
    #[error("word list is empty")]
    EmptyWordList,
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("token id {0} outside vocabulary")]
    UnknownId(u32),
    #[error("coordinate {0} outside [0, 1]")]
    CoordOutOfRange(f64),
    #[error("loc index {0} outside 0..=224")]
    LocOutOfRange(usize),
    #[error("invalid box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("canvas size {0} below minimum 8")]
    CanvasTooSmall(usize),
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("sequence of {len} positions exceeds maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("video needs 1..=16 frames, got {0}")]
    FrameCount(usize),
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("malformed record: {0}")]
    Record(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}
