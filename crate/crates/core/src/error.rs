use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-binary treatment at unit {unit}: {value}")]
    NonBinaryTreatment { unit: usize, value: f64 },

    #[error("non-finite value in {field} at unit {unit}")]
    NonFinite { field: String, unit: usize },

    #[error("empty treatment arm: {0}")]
    EmptyArm(String),

    #[error("missing required column {0}")]
    MissingColumn(String),

    #[error("row {row}, column {column}: cannot use value {value:?}")]
    Cell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("dataset carries no simulation truth")]
    MissingTruth,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("model fit failed: {0}")]
    ModelFit(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
