use thiserror::Error;

#[derive(Error, Debug)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] hclmp_core::CoreError),

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },

    #[error("element '{symbol}' is outside the model's element universe")]
    OutsideUniverse { symbol: String },

    #[error("transfer representations required but no generator was provided")]
    MissingTransfer,

    #[error("checkpoint format '{found}' is not supported (expected {expected})")]
    BadCheckpoint { expected: &'static str, found: String },

    #[error("{context}: need at least {needed} records, got {got}")]
    TooFewRecords { context: &'static str, needed: usize, got: usize },

    #[error("interpolation base points are degenerate: {reason}")]
    DegenerateGeometry { reason: String },

    #[error("external predictions at {path}: {msg}")]
    ExternalPredictions { path: String, msg: String },

    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
