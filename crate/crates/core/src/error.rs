use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A value outside its declared domain (action, state, probability, ...).
    #[error("domain error in `{field}`: {reason}")]
    Domain { field: String, reason: String },

    /// Malformed input data; `row` is the 1-based data row (header excluded).
    #[error("ingestion error at row {row}: {reason}")]
    Ingest { row: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Iterative solver hit its cap; carries the final duality gap.
    #[error("solver did not converge after {iters} iterations (duality gap {gap:e})")]
    Solver { iters: usize, gap: f64 },

    /// Objective returned a non-finite value while probing.
    #[error("objective not finite at probe point {point:?}")]
    Probe { point: Vec<f64> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Domain {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn ingest(row: usize, reason: impl Into<String>) -> Self {
        Error::Ingest {
            row,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
