use std::path::Path;

use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Solver(#[from] gnes::error::Error),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    /// A diagnostics check failed during `verify`.
    #[error("check {check} violated at iteration {k} with slack {slack:e}")]
    Violation { check: String, k: usize, slack: f64 },
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Violation { .. } => 1,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        use gnes::error::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Violation { .. } => "violation",
            CliError::Solver(e) => match e {
                E::Dimension { .. } => "dimension",
                E::Parameter { .. } => "parameter",
                E::Validation(_) => "validation",
                E::Numeric { .. } => "numeric",
                E::Tolerance { .. } => "tolerance",
                E::Diverged { .. } => "diverged",
                E::Locality { .. } => "locality",
                E::Deadlock { .. } => "deadlock",
            },
        }
    }

    /// The document written to stderr.
    pub fn to_json(&self) -> Value {
        let mut err = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Violation { check, k, slack } = self {
            err["check"] = json!(check);
            err["k"] = json!(k);
            err["slack"] = json!(slack);
        }
        json!({ "error": err })
    }
}
