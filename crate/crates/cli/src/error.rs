use thiserror::Error;

/// Failure classes with stable process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or schema-violating input. Exit code 2.
    #[error("{0}")]
    Input(String),
    /// The inputs are valid but a mathematical hypothesis fails. Exit code 3.
    #[error("{0}")]
    Hypothesis(String),
    /// A computation did not converge or left its domain. Exit code 4.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Hypothesis(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }
}

impl From<cone_contraction::Error> for CliError {
    fn from(e: cone_contraction::Error) -> Self {
        use cone_contraction::Error as E;
        let msg = e.to_string();
        match e {
            E::DimensionMismatch { .. }
            | E::NotSymmetric { .. }
            | E::NotPositiveDefinite { .. }
            | E::NonFinite
            | E::InvalidArgument(_) => CliError::Input(msg),
            E::Hypothesis(_) | E::Infeasible => CliError::Hypothesis(msg),
            E::EigenFailure | E::NonConvergence(_) | E::DomainExit { .. } | E::Singular(_) => CliError::Numerical(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
