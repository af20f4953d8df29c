use milp::{ModelError, Rational, SolveError};
use thiserror::Error;

use crate::domain::Violation;

/// Problems with input data: schemas, quotas, agent files, instances.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("quotas: {0}")]
    Quota(String),
    #[error("json: {0}")]
    Json(String),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("invalid instance: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("{0}")]
    Other(String),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("solver: {0}")]
    Solver(#[from] SolveError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    /// A node or time budget ran out. `incumbent` holds the best member ids
    /// found so far and their objective, when there is one.
    #[error("solver budget exceeded{}", .objective.as_ref().map(|o| format!(" (incumbent objective {o})")).unwrap_or_default())]
    BudgetExceeded {
        incumbent: Option<Vec<String>>,
        objective: Option<Rational>,
    },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("too large: {0}")]
    TooLarge(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
