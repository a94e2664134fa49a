use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("degenerate detector: both raw maneuver weights are zero")]
    DegenerateDetector,
    #[error("infeasible problem, violated constraints: {}", .violated.join(", "))]
    Infeasible { violated: Vec<String> },
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for PlannerError {
    fn from(e: std::io::Error) -> Self {
        PlannerError::Io(e.to_string())
    }
}

impl From<csv::Error> for PlannerError {
    fn from(e: csv::Error) -> Self {
        PlannerError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PlannerError>;
