use std::fmt;

use serde::Serialize;

/// Exit status: usage, input or shape problems.
pub const EXIT_USAGE: u8 = 2;
/// Exit status: training diverged or produced non-finite values.
pub const EXIT_DIVERGED: u8 = 3;
/// Exit status: an evaluation ran but missed its threshold.
pub const EXIT_THRESHOLD: u8 = 1;

/// A failure carrying its process exit status.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    pub fn threshold(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_THRESHOLD,
            kind: "threshold",
            message: message.into(),
        }
    }

    pub fn io(context: impl fmt::Display, err: std::io::Error) -> Self {
        CliError {
            code: EXIT_USAGE,
            kind: "io",
            message: format!("{context}: {err}"),
        }
    }

    /// One JSON object on one line, for the error stream.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            code: u8,
            message: &'a str,
        }
        serde_json::to_string(&Line {
            error: self.kind,
            code: self.code,
            message: &self.message,
        })
        .expect("plain strings serialize")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<decompnet::Error> for CliError {
    fn from(err: decompnet::Error) -> Self {
        use decompnet::Error as E;
        let (code, kind) = match &err {
            E::Divergence { .. } => (EXIT_DIVERGED, "divergence"),
            E::NonFiniteGradient { .. } => (EXIT_DIVERGED, "divergence"),
            E::Numeric(_) => (EXIT_DIVERGED, "numeric"),
            E::Config(_) => (EXIT_USAGE, "config"),
            E::Shape(_) => (EXIT_USAGE, "shape"),
            E::Usage(_) => (EXIT_USAGE, "usage"),
            E::Parse { .. } => (EXIT_USAGE, "parse"),
            E::Load { .. } => (EXIT_USAGE, "load"),
            E::Io(_) => (EXIT_USAGE, "io"),
        };
        CliError {
            code,
            kind,
            message: err.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
