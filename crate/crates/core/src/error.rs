use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is singular or near-singular (eigenvalue {eigenvalue:e})")]
    SingularMatrix { eigenvalue: f64 },

    #[error("metric annihilates every within-set difference")]
    DegenerateMetric,

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("non-finite value in row {row}, column `{column}`")]
    NonFiniteCovariate { row: usize, column: String },

    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("set {set_id}: found {found} units, expected {expected}")]
    SetSizeMismatch {
        set_id: String,
        found: usize,
        expected: usize,
    },

    #[error("set {set_id}: {count} treated units (exactly one required)")]
    TreatedCountViolation { set_id: String, count: usize },

    #[error("sets have differing sizes ({sizes:?}); a common number of controls per set is required")]
    InconsistentK { sizes: Vec<usize> },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
