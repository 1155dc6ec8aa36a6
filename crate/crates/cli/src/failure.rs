use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use lanetopo::Error;

/// A command failure and the process exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Exit 2.
    Io(String),
    /// Exit 3.
    Empty(String),
    /// Exit 4.
    Mismatch(String),
    /// Exit 5.
    Parse(String),
    /// Exit 1.
    Other(String),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Other(_) => 1,
            Failure::Io(_) => 2,
            Failure::Empty(_) => 3,
            Failure::Mismatch(_) => 4,
            Failure::Parse(_) => 5,
        })
    }

    /// Classifies a library error raised while handling `path`.
    pub fn at(path: &Path, e: Error) -> Self {
        let msg = format!("{}: {e}", path.display());
        match Failure::from(e) {
            Failure::Io(_) => Failure::Io(msg),
            Failure::Empty(_) => Failure::Empty(msg),
            Failure::Mismatch(_) => Failure::Mismatch(msg),
            Failure::Parse(_) => Failure::Parse(msg),
            Failure::Other(_) => Failure::Other(msg),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) => Failure::Io(msg),
            Error::Json(_) | Error::Parse(_) => Failure::Parse(msg),
            Error::Mismatch(_) | Error::Shape(_) | Error::Config(_) => Failure::Mismatch(msg),
            _ => Failure::Other(msg),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Io(m) | Failure::Empty(m) | Failure::Mismatch(m) | Failure::Parse(m) | Failure::Other(m) => {
                f.write_str(m)
            }
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;
