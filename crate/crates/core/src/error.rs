use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, GctfError>;

#[derive(Debug, Error)]
pub enum GctfError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("model validation failed: {}", format_violations(.0))]
    InvalidModel(Vec<Violation>),

    #[error("unknown {kind} `{name}`")]
    Lookup { kind: &'static str, name: String },

    #[error(
        "numerical failure at iteration {iteration} while updating factor `{factor}`: {detail}"
    )]
    Numerical {
        iteration: usize,
        factor: String,
        detail: String,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("document error: {0}")]
    Document(String),
}

impl GctfError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GctfError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error originates from input data rather than from configuration or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            GctfError::Parse { .. } | GctfError::Io { .. } | GctfError::InvalidValue(_)
        )
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
