use std::process::ExitCode;

/// Failure classes with distinct process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Other(_) => 1,
        })
    }
}

impl From<resilience_core::Error> for CliError {
    fn from(e: resilience_core::Error) -> Self {
        use resilience_core::Error as E;
        match e {
            E::Divergence(msg) => CliError::Divergence(format!(
                "{msg}; try a smaller learning rate or a different seed"
            )),
            E::Io(io) => CliError::Other(io.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
