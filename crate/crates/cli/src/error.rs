use thiserror::Error;

/// Exit codes: 1 usage, 2 data, 3 numeric failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<poretopo::Error> for CliError {
    fn from(e: poretopo::Error) -> Self {
        use poretopo::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) | E::OracleTooLarge { .. } => CliError::Usage(msg),
            E::Numeric(_) | E::FitFailed(_) | E::UndefinedMetric(_) => CliError::Numeric(msg),
            E::GenerationFailed(_) | E::UndefinedDescriptor(_) | E::Format(_) | E::Io(_) | E::Json(_) => CliError::Data(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
