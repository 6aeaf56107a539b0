use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?} ({context})")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
        context: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error in {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("magnitude projection is not differentiable at 0")]
    NonDifferentiable,

    #[error("training aborted: loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(expected: &[usize], got: &[usize], context: &'static str) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            got: got.to_vec(),
            context,
        }
    }
}
