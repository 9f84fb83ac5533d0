use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("tensor contains a non-finite value at index {0}")]
    NonFinite(usize),

    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },

    #[error("no Hadamard matrix construction available for order {0}")]
    UnsupportedSize(usize),

    #[error("transform of order 2^{0} exceeds the supported capacity")]
    Capacity(u32),

    #[error("dimension {0} cannot be factored into a supported rotation plan (2^k * m)")]
    RotationPlan(usize),

    #[error("unsupported bit width {0} (expected 4 or 8)")]
    UnsupportedBits(u8),

    #[error("invalid quantization scheme: {0}")]
    Scheme(String),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("tensor `{0}` missing from container")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("unknown dtype `{0}`")]
    UnknownDtype(String),

    #[error("container is malformed: {0}")]
    Container(String),

    #[error(
        "payload for `{name}` is truncated: need {need} bytes at offset {offset}, file has {have}"
    )]
    Truncated {
        name: String,
        offset: u64,
        need: u64,
        have: u64,
    },

    #[error("integer accumulator overflow in {0}")]
    AccumulatorOverflow(&'static str),

    #[error("power-of-two exponent {0} outside the supported range")]
    ScaleOverflow(i32),

    #[error("token id {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },

    #[error("token stream needs at least {need} tokens, got {got}")]
    EmptyStream { need: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}
