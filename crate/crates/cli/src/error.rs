use thiserror::Error;

/// CLI failures, split by exit code: bad input is caught before anything is
/// written (exit 2); failures while running abort with exit 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags a fallible step as part of input validation.
pub trait Validate<T> {
    fn invalid(self, what: &str) -> CliResult<T>;
}

/// Tags a fallible step as part of the run proper.
pub trait Abort<T> {
    fn aborted(self, what: &str) -> CliResult<T>;
}

impl<T, E: std::fmt::Display> Validate<T> for Result<T, E> {
    fn invalid(self, what: &str) -> CliResult<T> {
        self.map_err(|e| CliError::Validation(format!("{what}: {e}")))
    }
}

impl<T, E: std::fmt::Display> Abort<T> for Result<T, E> {
    fn aborted(self, what: &str) -> CliResult<T> {
        self.map_err(|e| CliError::Runtime(format!("{what}: {e}")))
    }
}
