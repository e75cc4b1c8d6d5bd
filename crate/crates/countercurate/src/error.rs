//! Failure classes and their process exit codes.

use std::fmt;

/// Exit code for bad flags or configuration.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for unreadable or invalid inputs.
pub const EXIT_DATA: i32 = 2;
/// Exit code for generation or language-model service failures.
pub const EXIT_SERVICE: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    Usage,
    Data,
    Service,
}

/// A failure that ends a command.
#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: FailureKind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: FailureKind::Data, message: message.into() }
    }

    pub fn service(message: impl Into<String>) -> Self {
        Self { kind: FailureKind::Service, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Usage => EXIT_USAGE,
            FailureKind::Data => EXIT_DATA,
            FailureKind::Service => EXIT_SERVICE,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<crate::config::ConfigError> for Failure {
    fn from(e: crate::config::ConfigError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<crate::dispatch::DispatchError> for Failure {
    fn from(e: crate::dispatch::DispatchError) -> Self {
        match e {
            crate::dispatch::DispatchError::Io(io) => Self::data(io.to_string()),
            other => Self::service(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Failure>;
