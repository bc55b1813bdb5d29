use std::fmt::{self, Display};
use std::path::Path;

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit 1).
    Usage(String),
    /// Unreadable or invalid input data, failed computation (exit 2).
    Data(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn data(path: &Path, e: impl Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub fn usage(e: impl Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Attaches a path to data errors.
pub trait Context<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T, E: Display> Context<T> for std::result::Result<T, E> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| data(path, e))
    }
}
