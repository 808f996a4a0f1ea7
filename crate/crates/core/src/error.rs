use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("update requested for frozen parameter `{0}`")]
    FrozenUpdate(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("malformed PPM: {0}")]
    Ppm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
