use thiserror::Error;

use crate::qp::{QpError, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("margin must be positive, got {0}")]
    InvalidMargin(f64),
    #[error("margin {mu} is infeasible; the largest achievable first moment is {max_first_moment}")]
    MarginInfeasible { mu: f64, max_first_moment: f64 },
    #[error("ranking penalty must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("sample needs at least one positive and one negative example")]
    ClassMissing,
    #[error("no positive examples")]
    NoPositives,
    #[error("empty input")]
    EmptyInput,
    #[error("rank {rank} out of range 1..={len}")]
    RankOutOfRange { rank: usize, len: usize },
    #[error("all voter weights are zero")]
    DegenerateWeights,
    #[error("{pairs} positive/negative pairs exceed the limit of {limit}")]
    PairsTooLarge { pairs: usize, limit: usize },
    #[error("{folds} folds requested for {m} examples")]
    TooManyFolds { folds: usize, m: usize },
    #[error("no grid cell could be trained")]
    NoFeasibleCell,
    #[error("solver stopped with status {status:?} (KKT residual {kkt_residual:e})")]
    SolverFailed { status: QpStatus, kkt_residual: f64 },
    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unsupported model file: {0}")]
    UnsupportedSchema(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Qp(#[from] QpError),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
