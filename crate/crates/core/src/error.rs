use thiserror::Error;

pub type Result<T> = std::result::Result<T, HudError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HudError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),

    #[error("KL divergence is infinite: q[{index}] = 0 while p[{index}] > 0")]
    InfiniteDivergence { index: usize },

    #[error("loss is not deterministic under frozen noise: {first} vs {second}")]
    Nondeterministic { first: f64, second: f64 },
}

impl HudError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        HudError::Shape {
            op,
            detail: detail.into(),
        }
    }
}
