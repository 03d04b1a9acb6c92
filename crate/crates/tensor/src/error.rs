use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("{op} needs even spatial dimensions, got {height}x{width}")]
    OddDimension {
        op: &'static str,
        height: usize,
        width: usize,
    },
    #[error("backward called without a recorded forward pass")]
    GraphNotRecorded,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
