use std::fmt;

use oscar_core::OscarError;

#[derive(Debug)]
pub enum CliError {
    /// Bad scenario, override or output location.
    Config(String),
    /// Failure inside an engine or analysis routine.
    Run(OscarError),
}

impl CliError {
    /// 2 for configuration, 3 for truncation, 4 for numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Run(OscarError::Domain(_)) => 2,
            CliError::Run(OscarError::Truncation { .. }) => 3,
            CliError::Run(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<OscarError> for CliError {
    fn from(e: OscarError) -> Self {
        CliError::Run(e)
    }
}

pub fn io_error(path: &std::path::Path, e: impl fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}
