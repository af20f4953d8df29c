use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("duplicate constraint name `{0}`")]
    DuplicateConstraint(String),
    #[error("negative upper bound on `{0}`")]
    NegativeUpperBound(String),
    #[error("{context}: variable index {index} is not declared in this model")]
    UnknownVariable { context: String, index: usize },
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("LP relaxation is unbounded")]
    Unbounded,
    #[error("supplied incumbent is infeasible: {0}")]
    BadIncumbent(String),
    #[error("external solver failed: {0}")]
    External(String),
    #[error(transparent)]
    Import(#[from] ImportError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("solution failed self-check: {0}")]
    SelfCheck(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("LP parse error at line {line}: {message}")]
pub struct LpParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImportError {
    #[error("line {line}: unknown variable `{name}`")]
    UnknownVariable { line: usize, name: String },
    #[error("line {line}: cannot parse `{text}`")]
    Malformed { line: usize, text: String },
    #[error("assignment violates `{0}`")]
    Infeasible(String),
}
