//! CLI error type with the exit-code contract: 1 = configuration,
//! 2 = numerical, 3 = property-check failure.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent configuration (exit code 1).
    Config(String),
    /// Numerical failure: non-convergence, too many failed replicates,
    /// construction breakdown (exit code 2).
    Numerical(String),
    /// A property suite found a violated invariant (exit code 3).
    Property(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Property(_) => 3,
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn numerical(msg: impl fmt::Display) -> Self {
        CliError::Numerical(msg.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
            CliError::Property(m) => write!(f, "property failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("io: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(format!("json: {e}"))
    }
}

/// Core errors surface as numerical failures unless they are argument
/// errors, which indicate a bad configuration.
impl From<invlearn_core::Error> for CliError {
    fn from(e: invlearn_core::Error) -> Self {
        use invlearn_core::Error as E;
        match &e {
            E::InvalidArgument(_) | E::OutOfDomain { .. } | E::ShapeMismatch(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
