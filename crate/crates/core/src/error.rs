use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A Brownian path or particle set cannot be split into the requested coarse resolution.
    #[error("coupling error: {0}")]
    Coupling(String),

    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),

    /// The bias target was not met before the level cap.
    #[error("budget infeasible: bias {bias:?} above target {target} at level {level} (cap {cap})")]
    BudgetInfeasible {
        level: f64,
        cap: f64,
        bias: Vec<f64>,
        target: f64,
    },

    #[error("degenerate rate profile: {0}")]
    DegenerateProfile(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn coupling(msg: impl Into<String>) -> Self {
        Error::Coupling(msg.into())
    }
}
