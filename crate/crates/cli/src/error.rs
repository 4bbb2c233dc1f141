use std::fmt;

/// Exit code 1: a check failed or training diverged.
pub const EXIT_FAILURE: u8 = 1;
/// Exit code 2: unusable input (unknown algebra, malformed file, bad config,
/// shape mismatch).
pub const EXIT_BAD_INPUT: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    Failure(String),
    BadInput(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Failure(_) => EXIT_FAILURE,
            CliError::BadInput(_) => EXIT_BAD_INPUT,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Failure(m) | CliError::BadInput(m) => f.write_str(m),
        }
    }
}

impl From<vnet_core::Error> for CliError {
    fn from(e: vnet_core::Error) -> Self {
        match e {
            vnet_core::Error::NonFinite(_) => CliError::Failure(e.to_string()),
            _ => CliError::BadInput(e.to_string()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn bad_input(msg: impl Into<String>) -> CliError {
    CliError::BadInput(msg.into())
}

/// Output-side failure (writing results), reported with exit code 1.
pub fn failure(context: &str, e: impl fmt::Display) -> CliError {
    CliError::Failure(format!("{context}: {e}"))
}
