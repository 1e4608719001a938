use thiserror::Error;

pub type Result<T, E = BilevelError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BilevelError {
    /// Malformed input: dimension mismatch, out-of-range index, empty split.
    #[error("input error: {0}")]
    Input(String),
    /// An oracle produced a non-finite value.
    #[error("evaluation error: {0}")]
    Evaluation(String),
    /// Invalid numeric parameters (step sizes, schedule constants).
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A required capability is missing (prox map, reference solution, projector).
    #[error("configuration error: {0}")]
    Configuration(String),
    /// Bad file contents (IDX headers, truncated payloads).
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("outer iteration {t}: {source}")]
    AtIteration {
        t: usize,
        #[source]
        source: Box<BilevelError>,
    },
}

impl BilevelError {
    /// The error with any iteration context stripped.
    pub fn root(&self) -> &BilevelError {
        match self {
            BilevelError::AtIteration { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self.root(), BilevelError::Evaluation(_))
    }
}

impl From<std::io::Error> for BilevelError {
    fn from(e: std::io::Error) -> Self {
        BilevelError::Io(e.to_string())
    }
}

impl From<csv::Error> for BilevelError {
    fn from(e: csv::Error) -> Self {
        BilevelError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for BilevelError {
    fn from(e: serde_json::Error) -> Self {
        BilevelError::Io(e.to_string())
    }
}
