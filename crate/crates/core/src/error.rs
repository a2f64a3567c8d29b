use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("enumeration budget exceeded: {0}")]
    Capacity(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("training diverged at step {step} (last good step: {})", last_good_text(*.last_good))]
    Divergence { step: usize, last_good: Option<usize> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint/config mismatch: {0}")]
    Mismatch(String),

    #[error("configuration too large: {0}")]
    Oversize(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn last_good_text(step: Option<usize>) -> String {
    step.map_or_else(|| "none".to_string(), |s| s.to_string())
}
