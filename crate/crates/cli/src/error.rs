use iriscap_core::Error;

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("compute error: {0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Compute(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Parameter(_) | Error::ConfigMismatch { .. } => CliError::Config(msg),
            Error::Manifest { .. }
            | Error::DuplicateSample { .. }
            | Error::MissingTemplate { .. }
            | Error::CorruptStore(_)
            | Error::IncompleteStore { .. }
            | Error::Format(_)
            | Error::Dimension { .. }
            | Error::AlreadyStripped { .. }
            | Error::Stacking(_)
            | Error::EmptyScores
            | Error::Image(_)
            | Error::Csv(_)
            | Error::Io(_) => CliError::Data(msg),
            Error::EmptyOverlap => CliError::Compute(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
