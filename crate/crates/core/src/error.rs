use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor dimension did not match what an op required. Names the axis
    /// so the caller can see which side is wrong.
    #[error("dimension mismatch on {axis}: expected {expected}, got {got}{}", ctx_suffix(.context))]
    Dimension {
        axis: &'static str,
        expected: usize,
        got: usize,
        context: String,
    },

    /// An op or layer was configured inconsistently (e.g. groups not dividing
    /// the channel count, head count not dividing the model dim).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Numerical failure: a NaN or infinity appeared where finite values are
    /// required. Carries the offending location when known.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// Checkpoint or config file is structurally invalid.
    #[error("format error: {0}")]
    Format(String),

    /// Dataset problem (empty root, bad labels, undecodable content).
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn ctx_suffix(ctx: &str) -> String {
    if ctx.is_empty() {
        String::new()
    } else {
        format!(" ({ctx})")
    }
}

impl Error {
    pub fn dim(axis: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            axis,
            expected,
            got,
            context: String::new(),
        }
    }

    pub fn dim_ctx(axis: &'static str, expected: usize, got: usize, context: impl Into<String>) -> Self {
        Error::Dimension {
            axis,
            expected,
            got,
            context: context.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
