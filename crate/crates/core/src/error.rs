use thiserror::Error;

use crate::expr::{EvalError, ParseError, VarTableError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Vars(#[from] VarTableError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{what}: {source}")]
    Eval {
        what: String,
        #[source]
        source: EvalError,
    },
    #[error("point is not on the target set (max |gamma| = {residual:e})")]
    NotOnSet { residual: f64 },
    #[error("rank drop in {what}: expected {expected}, found {found}")]
    RankDrop {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },
    #[error("integrator failure: {0}")]
    IntegratorBlowup(String),
    #[error("chart vector fields are dependent at the base point (rank {rank} < {n})")]
    IndependenceFailure { rank: usize, n: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("verification failed: {0}")]
    VerificationFailure(String),
    #[error("output is only available numerically")]
    NotSymbolic,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn eval(what: impl Into<String>, source: EvalError) -> Self {
        Error::Eval {
            what: what.into(),
            source,
        }
    }

    /// Failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::IntegratorBlowup(_)
                | Error::VerificationFailure(_)
                | Error::Eval { .. }
                | Error::RankDrop { .. }
                | Error::IndependenceFailure { .. }
                | Error::NotOnSet { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
