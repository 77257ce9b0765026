use thiserror::Error;

/// Errors raised by basis construction, smoothing and model fitting.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FdaError {
    #[error("invalid interval [{lo}, {hi}]: lower bound must be below upper bound")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("invalid differential operator: derivative order {order} needs a basis of order > {order}, got {basis_order}")]
    InvalidOperator { order: usize, basis_order: usize },

    #[error("time {t} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("domain mismatch: [{0}, {1}] vs [{2}, {3}]")]
    DomainMismatch(f64, f64, f64, f64),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("rank-deficient system ({context}); smallest eigenvalue {min_eigenvalue:e}")]
    RankDeficient { context: String, min_eigenvalue: f64 },

    #[error("fold {fold} holds {count} points; at least 2 are required")]
    FoldSize { fold: usize, count: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("confidence level {0} is not in (0, 1)")]
    InvalidLevel(f64),

    #[error("leave-one-out is degenerate at observation {index}: hat diagonal is 1")]
    DegenerateFold { index: usize },

    #[error("labels are not aligned: {0}")]
    Alignment(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("regressor has zero variance")]
    DegenerateRegressor,

    #[error("insufficient history before time {time}: need {lags} preceding values")]
    History { time: f64, lags: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}; try a smaller step size")]
    Divergence { epoch: usize },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

pub type Result<T> = std::result::Result<T, FdaError>;
