use std::fmt;
use std::process::ExitCode;

/// Failure carrying the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, unreadable or invalid configuration, missing files.
    Usage(String),
    /// Input files that exist but cannot be used.
    Data(String),
    /// The reasoning backend could not be reached.
    Backend(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Backend(_) => 4,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Backend(m) => write!(f, "backend unavailable: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

pub type CliResult<T> = Result<T, Failure>;

pub fn usage(msg: impl fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

pub fn data(msg: impl fmt::Display) -> Failure {
    Failure::Data(msg.to_string())
}
