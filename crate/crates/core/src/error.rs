use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum DbError {
    /// Some unit can never be (or is always) treated. `units` are 1-based.
    #[error("design is not identified: units {units:?} have {detail}")]
    Unidentified { units: Vec<usize>, detail: String },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("design matrix is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("assignment support of {size} exceeds the enumeration cap of {cap}")]
    SupportTooLarge { size: u128, cap: usize },

    #[error("iterative bound did not converge after {iterations} iterations (last min eigenvalue {last:e})")]
    NotConverged { iterations: usize, trace: Vec<f64>, last: f64 },

    #[error("invalid bound: {0}")]
    InvalidBound(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DbError>;
