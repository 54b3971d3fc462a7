use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("usage: {0}")]
    Usage(String),

    /// Shapes disagreed in a tensor or graph operation.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A tensor was constructed from non-finite data.
    #[error("invalid tensor: {0}")]
    Tensor(String),

    /// A plan document could not be parsed.
    #[error("parse error at {path}: {detail}")]
    Parse { path: String, detail: String },

    /// An operator schema was inconsistent or missing an entry.
    #[error("schema error: {0}")]
    Schema(String),

    /// An attribute could not be encoded.
    #[error("encoding error: {0}")]
    Encoding(String),

    /// A plan could not be evaluated against a model.
    #[error("inference error at {path}: {detail}")]
    Inference { path: String, detail: String },

    /// Training input was unusable (e.g. missing labels).
    #[error("training data error: {0}")]
    TrainingData(String),

    /// Training itself failed (divergence, bad gradients).
    #[error("training error: {0}")]
    Training(String),

    /// A metric was asked to divide by something non-positive.
    #[error("metric error: {0}")]
    Metric(String),

    /// The baseline regression could not be fit.
    #[error("baseline fit error: {0}")]
    Fit(String),

    /// A persisted artifact was malformed or inconsistent.
    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
