//! Machine-readable failures printed as one JSON object on stderr.

use std::fmt;
use std::path::Path;

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<u64>,
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            file: None,
            offset: None,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    /// Attaches `path` unless the error already names a file.
    pub fn in_file(mut self, path: &Path) -> Self {
        if self.file.is_none() {
            self.file = Some(path.display().to_string());
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("failure serializes")
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<spiralcine::Error> for Failure {
    fn from(e: spiralcine::Error) -> Self {
        let kind = e.kind();
        match e {
            spiralcine::Error::Format { path, offset, message } => Self {
                kind,
                message,
                file: Some(path),
                offset: Some(offset),
            },
            other => Self::new(kind, other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::new("json", e.to_string())
    }
}

/// Adds file context to any error convertible to [`Failure`].
pub trait Context<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T, E: Into<Failure>> Context<T> for Result<T, E> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| e.into().in_file(path))
    }
}
