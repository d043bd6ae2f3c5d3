use thiserror::Error;

/// Crate-wide error type. `Data` and `Usage` map to CLI exit code 2,
/// everything else to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Usage(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// 2 for bad input data or bad invocation, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) | Error::Usage(_) | Error::Csv(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
