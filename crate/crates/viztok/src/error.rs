use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VizError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("image is {got:?} (h, w, c), encoder expects {want:?}")]
    ImageShape {
        got: (usize, usize, usize),
        want: (usize, usize, usize),
    },
    #[error("patch grid side {side} not divisible by pooling grid {grid}")]
    Indivisible { side: usize, grid: usize },
    #[error("expected {want} values, got {got}")]
    Length { got: usize, want: usize },
}
