use thiserror::Error;

use crate::ingest::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("size error: {0}")]
    Size(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("input error: {0}")]
    Input(String),

    #[error("training diverged at step {step}: non-finite loss")]
    Divergence { step: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
