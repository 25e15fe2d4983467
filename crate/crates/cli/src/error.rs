use thiserror::Error;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Assumption(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<fparma::Error> for CliError {
    fn from(e: fparma::Error) -> Self {
        use fparma::Error as E;
        match e {
            E::InvalidModel(_) | E::NotStationary { .. } | E::NotSelfAdjoint(_) | E::NotPositiveSemiDefinite(_) => {
                CliError::Assumption(e.to_string())
            }
            E::Numerical(_) | E::NonFinite(_) => CliError::Numerical(e.to_string()),
            E::Io(io) => CliError::Io(io),
            E::DimensionMismatch(_) | E::InvalidParameter(_) | E::TooShort(_) | E::Json(_) => {
                CliError::Config(e.to_string())
            }
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
