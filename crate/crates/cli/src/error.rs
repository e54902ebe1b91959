use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Model(#[from] dualcp_core::Error),
}

impl CliError {
    /// Machine-readable tag for the structured error report.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Model(e) => e.kind(),
        }
    }

    /// 2 for rejected input, 3 for file system errors, 1 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use dualcp_core::Error as Core;
        match self {
            CliError::Config(_)
            | CliError::Model(
                Core::InvalidParameter { .. }
                | Core::LengthMismatch { .. }
                | Core::NonPositiveInput { .. }
                | Core::DegenerateShare { .. }
                | Core::ZeroMode,
            ) => 2,
            CliError::Io { .. } => 3,
            CliError::Model(_) => 1,
        }
    }

    pub fn report(&self) -> serde_json::Value {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() })
    }
}
