use std::fmt;

/// Failure classes, each with its own exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ErrorKind::Usage => "ERR_USAGE",
            ErrorKind::Data => "ERR_DATA",
            ErrorKind::Numeric => "ERR_NUMERIC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Error {
    pub kind: ErrorKind,
    pub message: String,
}

impl Error {
    pub fn usage(message: impl Into<String>) -> Self {
        Error { kind: ErrorKind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Error { kind: ErrorKind::Data, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Error { kind: ErrorKind::Numeric, message: message.into() }
    }

    /// One line: `ERR_<KIND>: message`, newlines flattened.
    pub fn line(&self) -> String {
        format!("{}: {}", self.kind.tag(), self.message.replace('\n', " "))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::data(e.to_string())
    }
}

impl From<gesture_drums_core::Error> for Error {
    fn from(e: gesture_drums_core::Error) -> Self {
        use gesture_drums_core::Error as E;
        let kind = match e {
            E::NonFiniteLoss { .. } | E::ZeroNorm => ErrorKind::Numeric,
            E::InvalidArgument(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        };
        Error { kind, message: e.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
