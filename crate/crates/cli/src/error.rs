use thiserror::Error;

/// Failures carry the exit-code class: domain failures exit 1, anything
/// about the environment (files, malformed inputs, price coverage) exits 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Env(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Env(_) => 2,
        }
    }
}

pub fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

pub fn env(e: impl std::fmt::Display) -> CliError {
    CliError::Env(e.to_string())
}

pub type CliResult<T> = Result<T, CliError>;
