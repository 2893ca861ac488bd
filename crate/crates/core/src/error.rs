use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("bad length: expected {expected}, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("bad dimensions: {0}")]
    BadDims(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("search space of {candidates} candidates exceeds budget {budget}")]
    SearchBudgetExceeded { candidates: u128, budget: u128 },
    #[error("decoder requires the Alamouti code, got {0}")]
    WrongCode(String),
    #[error("bad magic line in model file: {0:?}")]
    BadMagic(String),
    #[error("unsupported model file version {0:?}")]
    VersionMismatch(String),
    #[error("corrupt model payload: {0}")]
    CorruptPayload(String),
    #[error("a trained model is required for the DL-DD predictor")]
    MissingModel,
    #[error("unknown predictor {0:?}")]
    UnknownPredictor(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
