use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A vector or matrix does not have the length its layout requires.
    #[error("dimension mismatch in {block}: expected {expected}, found {found}")]
    Dimension {
        block: String,
        expected: usize,
        found: usize,
    },

    /// A scalar parameter lies outside its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: String, reason: String },

    /// Structural validation of input data failed (graph, instance document).
    #[error("validation failed: {0}")]
    Validation(String),

    /// An oracle returned a NaN or infinite value.
    #[error("non-finite value from {source_name} for agent {agent}{}", draw.map(|t| format!(" (draw {t})")).unwrap_or_default())]
    Numeric {
        source_name: String,
        agent: usize,
        draw: Option<usize>,
    },

    /// An iterative routine did not reach its tolerance within its budget.
    #[error("{routine} did not converge: achieved gap {achieved:e} after {iterations} iterations")]
    Tolerance {
        routine: String,
        achieved: f64,
        iterations: usize,
    },

    /// The iterate became non-finite during a run.
    #[error("iterate became non-finite at iteration {iteration} during {phase}")]
    Diverged { iteration: usize, phase: String },

    /// An agent touched data it was not licensed to read.
    #[error("locality violation: agent {agent} read {field}")]
    Locality { agent: usize, field: String },

    /// An expected message was not delivered before a phase barrier.
    #[error("deadlock in phase {phase} at iteration {iteration}: agent {agent} missing message from {sender}")]
    Deadlock {
        phase: String,
        iteration: usize,
        agent: usize,
        sender: usize,
    },
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(block: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Dimension {
            block: block.into(),
            expected,
            found,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
