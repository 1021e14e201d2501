use thiserror::Error;

#[derive(Debug, Error)]
pub enum SheError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("receive filter has zero norm")]
    ZeroFilter,

    #[error("degenerate receive-filter cache: kappa_bar[{index}] = {value}")]
    DegenerateCache { index: usize, value: f64 },

    #[error("receive filter objective decreased from {before} to {after}")]
    SolverStall { before: f64, after: f64 },

    #[error("subproblem infeasible: {0}")]
    InfeasibleSubproblem(String),

    #[error("solver failed: {0}")]
    SolverFailure(String),

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SheError>;

impl From<serde_json::Error> for SheError {
    fn from(e: serde_json::Error) -> Self {
        SheError::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for SheError {
    fn from(e: toml::de::Error) -> Self {
        SheError::Parse(e.to_string())
    }
}

impl From<csv::Error> for SheError {
    fn from(e: csv::Error) -> Self {
        SheError::Parse(e.to_string())
    }
}
