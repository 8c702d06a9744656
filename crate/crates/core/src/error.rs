use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A located, machine-coded finding produced while parsing or validating inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Stable machine-readable code, e.g. `event.probability_range`.
    pub code: String,
    /// Entity path (`hazard.events[e1].annual_probability`) or `line:column` for syntax errors.
    pub location: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: impl Into<String>, location: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            code: code.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.code, self.location, self.message)
    }
}

/// Which stage of document intake rejected the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticClass {
    Syntax,
    Schema,
    Validation,
}

impl fmt::Display for DiagnosticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DiagnosticClass::Syntax => "syntax",
            DiagnosticClass::Schema => "schema",
            DiagnosticClass::Validation => "validation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PclError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("reference error: {0}")]
    Reference(String),

    #[error("state error: {0}")]
    State(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("incomplete consultation: {} missing vote(s)", missing.len())]
    Incomplete { missing: Vec<(String, String)> },

    #[error("instance too large for exhaustive search: {size} candidates (limit {limit})")]
    TooLarge { size: usize, limit: usize },

    #[error("{class} errors: {}", join_diagnostics(diagnostics))]
    Invalid {
        class: DiagnosticClass,
        diagnostics: Vec<Diagnostic>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("usage error: {0}")]
    Usage(String),
}

fn join_diagnostics(diagnostics: &[Diagnostic]) -> String {
    diagnostics
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl PclError {
    /// Machine-readable code used by the CLI and the HTTP service.
    pub fn code(&self) -> &'static str {
        match self {
            PclError::Domain(_) => "domain",
            PclError::Reference(_) => "reference",
            PclError::State(_) => "state",
            PclError::Consistency(_) => "consistency",
            PclError::Incomplete { .. } => "incomplete",
            PclError::TooLarge { .. } => "too_large",
            PclError::Invalid { class, .. } => match class {
                DiagnosticClass::Syntax => "syntax",
                DiagnosticClass::Schema => "schema",
                DiagnosticClass::Validation => "validation",
            },
            PclError::Io(_) => "io",
            PclError::Usage(_) => "usage",
        }
    }

    /// Flattens the error into diagnostics for reporting.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            PclError::Invalid { diagnostics, .. } => diagnostics.clone(),
            PclError::Incomplete { missing } => missing
                .iter()
                .map(|(g, l)| {
                    Diagnostic::new(
                        "vote.missing",
                        format!("votes[{g},{l}]"),
                        format!("group {g} has not voted on loss {l}"),
                    )
                })
                .collect(),
            other => vec![Diagnostic::new(other.code(), "", other.to_string())],
        }
    }
}

pub type Result<T> = std::result::Result<T, PclError>;
