use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Domain,
    Config,
    Size,
    Argument,
    Geometry,
    Numeric,
    Format,
    Usage,
    Io,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorKind::Domain => "domain error",
            ErrorKind::Config => "configuration error",
            ErrorKind::Size => "size error",
            ErrorKind::Argument => "argument error",
            ErrorKind::Geometry => "geometry error",
            ErrorKind::Numeric => "numeric error",
            ErrorKind::Format => "format error",
            ErrorKind::Usage => "usage error",
            ErrorKind::Io => "i/o error",
        };
        f.write_str(s)
    }
}

/// Error raised by any module, tagged with the module it came from.
#[derive(Debug, thiserror::Error)]
#[error("{module}: {kind}: {message}")]
pub struct Error {
    pub module: &'static str,
    pub kind: ErrorKind,
    pub message: String,
    // The message already carries the io error's text, so this is not
    // exposed as `source()`; chained printing would repeat it.
    io_error: Option<std::io::Error>,
}

impl Error {
    pub fn new(module: &'static str, kind: ErrorKind, message: impl Into<String>) -> Self {
        Error {
            module,
            kind,
            message: message.into(),
            io_error: None,
        }
    }

    pub fn io(module: &'static str, context: impl Into<String>, err: std::io::Error) -> Self {
        let message = format!("{}: {}", context.into(), err);
        Error {
            module,
            kind: ErrorKind::Io,
            message,
            io_error: Some(err),
        }
    }

    /// The underlying operating-system error of an i/o failure.
    pub fn io_error(&self) -> Option<&std::io::Error> {
        self.io_error.as_ref()
    }

    pub fn domain(module: &'static str, message: impl Into<String>) -> Self {
        Self::new(module, ErrorKind::Domain, message)
    }

    pub fn config(module: &'static str, message: impl Into<String>) -> Self {
        Self::new(module, ErrorKind::Config, message)
    }

    pub fn size(module: &'static str, message: impl Into<String>) -> Self {
        Self::new(module, ErrorKind::Size, message)
    }

    pub fn argument(module: &'static str, message: impl Into<String>) -> Self {
        Self::new(module, ErrorKind::Argument, message)
    }

    pub fn geometry(module: &'static str, message: impl Into<String>) -> Self {
        Self::new(module, ErrorKind::Geometry, message)
    }

    pub fn numeric(module: &'static str, message: impl Into<String>) -> Self {
        Self::new(module, ErrorKind::Numeric, message)
    }

    pub fn format(module: &'static str, message: impl Into<String>) -> Self {
        Self::new(module, ErrorKind::Format, message)
    }

    pub fn usage(module: &'static str, message: impl Into<String>) -> Self {
        Self::new(module, ErrorKind::Usage, message)
    }
}
