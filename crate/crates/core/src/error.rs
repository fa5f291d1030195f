use std::fmt;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// NaN or infinity where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed or unsupported file contents.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("config error: {0}")]
    Config(String),

    /// A matmul was executed on operands that are not covered by the site map.
    #[error("quantization audit failed: {0}")]
    Audit(String),

    /// A quantized checkpoint was never calibrated.
    #[error("checkpoint is flagged uncalibrated ({0}); pass the override flag to evaluate anyway")]
    Uncalibrated(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl fmt::Display) -> Self {
        Error::Shape {
            op,
            detail: detail.to_string(),
        }
    }

    pub(crate) fn contract(detail: impl fmt::Display) -> Self {
        Error::Contract(detail.to_string())
    }

    pub(crate) fn format(offset: u64, detail: impl fmt::Display) -> Self {
        Error::Format {
            offset,
            detail: detail.to_string(),
        }
    }
}
