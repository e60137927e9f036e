//! Error records and process exit codes.

use qlevel_core::Error;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_SINGULAR_CONTROL: i32 = 5;
pub const EXIT_NO_BRACKET: i32 = 6;
pub const EXIT_NUMERICAL: i32 = 7;

/// Printed to stderr as one JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, thiserror::Error)]
#[error("{kind} error at `{path}`: {message}")]
pub struct CliError {
    pub kind: &'static str,
    /// Dotted location in the config file, empty when not applicable.
    pub path: String,
    pub message: String,
    #[serde(skip)]
    pub code: i32,
}

impl CliError {
    fn new(kind: &'static str, code: i32, path: &str, message: impl Into<String>) -> Self {
        Self {
            kind,
            path: path.to_string(),
            message: message.into(),
            code,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", EXIT_USAGE, "", message)
    }

    pub fn validation(path: &str, message: impl Into<String>) -> Self {
        Self::new("validation", EXIT_VALIDATION, path, message)
    }

    pub fn io(path: &str, err: &std::io::Error) -> Self {
        Self::new("io", EXIT_IO, path, err.to_string())
    }

    /// Classify a library error raised while handling `path`.
    pub fn from_core(err: Error, path: &str) -> Self {
        let (kind, code) = classify(&err);
        Self::new(kind, code, path, err.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error records always serialize")
    }
}

fn classify(err: &Error) -> (&'static str, i32) {
    match err {
        Error::MeshNode { source, .. } => classify(source),
        Error::SingularControl { .. } => ("singular_control", EXIT_SINGULAR_CONTROL),
        Error::NoBracket { .. } => ("no_bracket", EXIT_NO_BRACKET),
        Error::Io(_) | Error::Csv(_) => ("io", EXIT_IO),
        Error::EigenFailure | Error::RootNotFound(_) | Error::ImaginaryResidual(_) | Error::NonFiniteCoefficient { .. } => {
            ("numerical", EXIT_NUMERICAL)
        }
        _ => ("validation", EXIT_VALIDATION),
    }
}
