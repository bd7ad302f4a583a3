use thiserror::Error;

#[derive(Error, Debug)]
pub enum CoreError {
    #[error("unknown element symbol '{symbol}'")]
    UnknownElement { symbol: String },

    #[error("element '{symbol}' appears more than once")]
    DuplicateElement { symbol: String },

    #[error("negative fraction {value} for element '{element}'")]
    NegativeFraction { element: String, value: f64 },

    #[error("non-finite fraction for element '{element}'")]
    NonFiniteFraction { element: String },

    #[error("composition has no positive fractions")]
    EmptyComposition,

    #[error("composition '{text}' is malformed: {msg}")]
    BadCompositionText { text: String, msg: String },

    #[error("composition has {got} elements, expected between {min} and {max}")]
    ElementCount { got: usize, min: usize, max: usize },

    #[error("step {step} does not evenly divide the unit interval")]
    BadStep { step: f64 },

    #[error("element '{element}' is outside trio {trio}")]
    ElementOutsideTrio { element: String, trio: String },

    #[error("trio elements must be three distinct symbols")]
    BadTrio,

    #[error("{path}:{row}: {msg}")]
    Malformed { path: String, row: usize, msg: String },

    #[error("trio {trio} is not an eligible data instance ({interior} interior, {perimeter} perimeter grid points present)")]
    NotEligible { trio: String, interior: usize, perimeter: usize },

    #[error("{context}: need at least {needed} records, got {got}")]
    TooFewRecords { context: &'static str, needed: usize, got: usize },

    #[error("channel {channel} is degenerate (zero variance); cannot standardize")]
    DegenerateChannel { channel: usize },

    #[error("energy grid [{min}, {max}] does not cover the resampling range")]
    DosCoverage { min: f64, max: f64 },

    #[error("energies must be strictly ascending (violated at index {index})")]
    DosNotAscending { index: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
