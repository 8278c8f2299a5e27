use std::path::PathBuf;

use thiserror::Error;

use crate::qp::QpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("velocity subproblem failed at iteration {iteration}: {source}")]
    Subproblem {
        iteration: usize,
        #[source]
        source: QpError,
    },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("invalid step schedule: {0}")]
    ScheduleInvalid(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("degenerate start: ||F(x0)||^2 + B = 0")]
    DegenerateStart,
    #[error("constraint set is not a product of simplices")]
    UnsupportedConstraintSet,
    #[error("reference solution required for this certificate")]
    ReferenceMissing,
    #[error("matrix factorization failed: {0}")]
    SingularMatrix(String),
    #[error("barrier method failed: {0}")]
    BarrierFailure(String),
    #[error("no strictly feasible starting point found")]
    StartInfeasible,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("no data to plot in {0}")]
    EmptySeries(String),
    #[error("run `{run}` failed: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(field: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
