//! Scenario-driven sweeps, optimal-altitude tables and the oracle suite
//! behind the `rfuwoc` command.

pub mod scenario;
pub mod suite;
pub mod sweep;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("invalid {field}: {msg}")]
    Field { field: String, msg: String },

    #[error("{0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] rfuwoc::Error),

    #[error("{failed} of {total} grid points failed; first failure: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },

    #[error("{failed} optimal-altitude rows failed")]
    AltitudeRows { failed: usize },

    #[error("{failed} of {total} oracle checks failed")]
    OracleFailure { failed: usize, total: usize },
}

impl CliError {
    pub fn field(field: &str, msg: impl Into<String>) -> Self {
        CliError::Field {
            field: field.to_string(),
            msg: msg.into(),
        }
    }

    /// 1: bad input, 2: numerical failure, 3: oracle-suite failure.
    pub fn exit_code(&self) -> i32 {
        use rfuwoc::Error as E;
        match self {
            CliError::Parse(_) | CliError::Field { .. } | CliError::Io(_) => 1,
            CliError::Core(e) => match e {
                E::Domain { .. } | E::Lookup { .. } | E::Parse { .. } | E::InvalidParameter { .. } => 1,
                E::PoleCollision { .. }
                | E::Convergence { .. }
                | E::Consistency(_)
                | E::Accuracy { .. }
                | E::NoInteriorOptimum { .. }
                | E::Degenerate(_) => 2,
            },
            CliError::TooManyFailures { .. } | CliError::AltitudeRows { .. } => 2,
            CliError::OracleFailure { .. } => 3,
        }
    }
}
