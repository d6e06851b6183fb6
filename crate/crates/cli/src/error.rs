use std::fmt;

use thinktank_core::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NOT_FOUND: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;
pub const EXIT_INTEGRITY: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
    pub details: Vec<String>,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            details: Vec::new(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_VALIDATION, message)
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        let code = if err.kind() == std::io::ErrorKind::NotFound {
            EXIT_NOT_FOUND
        } else {
            EXIT_FAILURE
        };
        Self::new(code, format!("{}: {err}", path.display()))
    }

    /// Exit code for an error kind as reported by the service.
    pub fn code_for_kind(kind: &str) -> i32 {
        match kind {
            "validation" | "state" | "conflict" | "precondition" => EXIT_VALIDATION,
            "not_found" => EXIT_NOT_FOUND,
            "gateway" | "configuration" => EXIT_BACKEND,
            "integrity" => EXIT_INTEGRITY,
            _ => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)?;
        for d in &self.details {
            write!(f, "\n  - {d}")?;
        }
        Ok(())
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Validation(_) | Error::Conflict(_) | Error::State(_) | Error::Precondition(_) => EXIT_VALIDATION,
            Error::NotFound { .. } => EXIT_NOT_FOUND,
            Error::Gateway(_) | Error::Configuration(_) => EXIT_BACKEND,
            Error::Integrity { .. } | Error::FormatVersion { .. } => EXIT_INTEGRITY,
            Error::Io { .. } => EXIT_FAILURE,
        };
        let details = match &err {
            Error::Validation(v) => v.iter().map(ToString::to_string).collect(),
            _ => Vec::new(),
        };
        let message = match &err {
            Error::Validation(_) => "validation failed".to_owned(),
            other => other.to_string(),
        };
        Self { code, message, details }
    }
}
