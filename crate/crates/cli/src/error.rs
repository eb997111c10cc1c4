//! CLI errors and their exit codes.

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The configuration cannot be run as written.
    #[error("{0}")]
    Validation(String),
    /// A task failed while running.
    #[error("{0}")]
    Runtime(String),
    /// Writing outputs failed; `completed` lists files already written.
    #[error("{message}")]
    Io { message: String, completed: Vec<String> },
}

impl CliError {
    /// 1 for validation errors, 2 for everything that happens at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) | CliError::Io { .. } => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
            CliError::Io { .. } => "io",
        }
    }

    /// Machine-readable form printed on failure.
    pub fn to_json(&self) -> serde_json::Value {
        let mut body = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Io { completed, .. } = self {
            body["completed_files"] = json!(completed);
        }
        json!({ "error": body })
    }
}

impl From<lpsv_core::Error> for CliError {
    fn from(e: lpsv_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
