use thiserror::Error;

/// Errors raised by the engine, the models and the experiment pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid graph reference: {0}")]
    Graph(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("undefined loss: {0}")]
    UndefinedLoss(String),

    #[error("undefined density ratio: {0}")]
    UndefinedRatio(String),

    #[error("finite-difference oracle failure: {0}")]
    Oracle(String),

    #[error("empty {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
