use std::fmt;

/// Failure class, doubling as the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Endpoint = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        CliError {
            kind: ExitKind::Usage,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn endpoint(e: impl Into<anyhow::Error>) -> Self {
        CliError {
            kind: ExitKind::Endpoint,
            error: e.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

/// Anything else is a data error.
impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError {
            kind: ExitKind::Data,
            error: e.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, CliError>;
