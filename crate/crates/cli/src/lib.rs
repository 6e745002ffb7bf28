//! Commands behind the `qhead` binary: config handling, artifact schemas and
//! the generate / search / train / eval / report-params workflows.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::PathBuf;

pub use artifacts::ArchitectureExport;
pub use config::{DataSource, Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] qhead_core::Error),
    #[error("invalid {what} at `{field}`: {message}")]
    Schema {
        what: String,
        field: String,
        message: String,
    },
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Short machine-readable category for the error report.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(qhead_core::Error::CandidateCollapse { .. }) => "candidate_collapse",
            CliError::Core(qhead_core::Error::NonFiniteGradient { .. }) => "non_finite_gradient",
            CliError::Core(qhead_core::Error::ScaleGuard(_)) => "scale_guard",
            CliError::Core(_) => "core",
            CliError::Schema { .. } => "schema",
            CliError::Read { .. } => "read",
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
        }
    }

    pub fn report(&self) -> serde_json::Value {
        let mut v = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Schema { field, .. } = self {
            v["field"] = serde_json::Value::String(field.clone());
        }
        v
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
