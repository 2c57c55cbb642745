//! Driver for the Fortran HLS bridge: preprocess, run the front end, lower
//! pragmas and streams, downgrade to the v7 dialect, validate and emit.

pub mod config;
pub mod pipeline;
pub mod tools;

use std::fmt;

use fhls_core::ir::Violation;
use thiserror::Error;

pub use config::{DriverConfig, Mode};
pub use pipeline::{run_all, run_pipeline, Command, PipelineReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Preprocess,
    Frontend,
    Parse,
    Normalize,
    Pragma,
    Stream,
    Downgrade,
    Validate,
    Emit,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Frontend => "frontend",
            Stage::Parse => "parse",
            Stage::Normalize => "normalize",
            Stage::Pragma => "pragma",
            Stage::Stream => "stream",
            Stage::Downgrade => "downgrade",
            Stage::Validate => "validate",
            Stage::Emit => "emit",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{kernel}: {stage} stage failed: {message}")]
    Stage { kernel: String, stage: Stage, message: String },
    #[error("{kernel}: validation failed with {} violation(s):\n{}", .violations.len(), list(.violations))]
    Validation { kernel: String, violations: Vec<Violation> },
}

fn list(vs: &[Violation]) -> String {
    vs.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n")
}

impl DriverError {
    /// 1 usage/config, 2 stage failure, 3 validation failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            DriverError::Usage(_) | DriverError::Config(_) => 1,
            DriverError::Stage { .. } => 2,
            DriverError::Validation { .. } => 3,
        }
    }

    /// The message without its category prefix.
    pub fn message(&self) -> String {
        match self {
            DriverError::Usage(m) | DriverError::Config(m) => m.clone(),
            other => other.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fhls_core::ir::Rule;

    #[test]
    fn exit_codes_follow_error_class() {
        let stage = DriverError::Stage { kernel: "k".into(), stage: Stage::Parse, message: "bad".into() };
        assert_eq!(stage.to_string(), "k: parse stage failed: bad");
        let validation = DriverError::Validation {
            kernel: "k".into(),
            violations: vec![Violation { rule: Rule::OpaquePointer, location: "@k".into(), detail: "ptr".into() }],
        };
        let codes: Vec<i32> = [DriverError::Usage("u".into()), DriverError::Config("c".into()), stage, validation]
            .iter()
            .map(DriverError::exit_code)
            .collect();
        assert_eq!(codes, [1, 1, 2, 3]);
    }
}
