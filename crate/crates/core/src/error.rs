use thiserror::Error;

#[derive(Debug, Error)]
pub enum DmError {
    #[error("usage error on `{parameter}`: {message}")]
    Usage { parameter: String, message: String },

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("table allocation would need about {bytes} bytes")]
    Allocation { bytes: u64 },

    #[error("integer overflow in {context}")]
    Overflow { context: String },

    #[error("computation budget exceeded: {0}")]
    Budget(String),

    #[error("insufficient Laurent order: have {have}, need {need}")]
    LaurentOrder { have: usize, need: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("bad cache file: {0}")]
    BadCache(String),
}

pub type Result<T> = std::result::Result<T, DmError>;

impl DmError {
    pub fn usage(parameter: &str, message: impl Into<String>) -> Self {
        DmError::Usage {
            parameter: parameter.to_string(),
            message: message.into(),
        }
    }

    /// Stable error code for the machine-readable failure record.
    pub fn code(&self) -> &'static str {
        match self {
            DmError::Usage { .. } => "usage",
            DmError::OutOfRange(_) => "out_of_range",
            DmError::Allocation { .. } => "allocation",
            DmError::Overflow { .. } => "overflow",
            DmError::Budget(_) => "budget",
            DmError::LaurentOrder { .. } => "laurent_order",
            DmError::Io(_) => "io",
            DmError::Serde(_) => "serde",
            DmError::BadCache(_) => "bad_cache",
        }
    }
}
