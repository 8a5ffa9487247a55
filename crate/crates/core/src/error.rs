use thiserror::Error;

use crate::lp::LpError;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} row {row} is not a distribution (sum = {sum})")]
    Distribution { what: String, row: String, sum: f64 },

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unreachable observation {observation} for agent {agent} after action {action}")]
    UnreachableObservation {
        agent: usize,
        action: usize,
        observation: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("capacity exceeded: agent {agent} would have {size} nodes (cap {cap})")]
    Capacity { agent: usize, size: String, cap: usize },

    #[error("wall-clock budget exhausted")]
    WallClock,

    #[error("malformed controller text, line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("oracle limit exceeded: {0}")]
    OracleLimit(String),

    #[error("linear program failed: {0}")]
    Lp(#[from] LpError),

    #[error("linear system solve failed: {0}")]
    Solve(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
