use std::fmt;

use srx_core::Error;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    Input = 2,
    Failed = 3,
    Inconclusive = 4,
    Numeric = 5,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    pub fn new(status: ExitStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(ExitStatus::Input, message)
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::input(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::BlowUp { .. }
            | Error::SingularTangentMap { .. }
            | Error::NonFinite(_)
            | Error::DegenerateSampling(_)
            | Error::ZeroVector => ExitStatus::Numeric,
            Error::NotCertifiable(_) | Error::MissingMember(_) => ExitStatus::Failed,
            _ => ExitStatus::Input,
        };
        let message = match &e {
            Error::NotCertifiable(_) => format!("not_certifiable: {e}"),
            _ => e.to_string(),
        };
        Self { status, message }
    }
}
