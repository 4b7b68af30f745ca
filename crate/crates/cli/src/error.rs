use std::path::Path;

use dides_core::{DidesError, ErrorClass};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed configuration or input files.
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] DidesError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            CliError::Input(_) | CliError::Io { .. } => ErrorClass::Input,
            CliError::Model(e) => e.class(),
        }
    }

    /// 2 for input errors, 3 for solver failures, 4 for estimator failures.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Input => 2,
            ErrorClass::Solver => 3,
            ErrorClass::Estimator => 4,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let class = match self.class() {
            ErrorClass::Input => "input",
            ErrorClass::Solver => "solver",
            ErrorClass::Estimator => "estimator",
        };
        let mut value = json!({
            "status": "error",
            "class": class,
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::Model(DidesError::NoConvergence { solver, iterations, residual, trace }) = self {
            value["solver"] = json!({ "name": solver, "iterations": iterations, "residual": residual, "trace": trace });
        }
        value
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(format!("CSV error: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(CliError::Input("x".into()).exit_code(), 2);
        assert_eq!(CliError::from(DidesError::Domain("x".into())).exit_code(), 2);
        let nc = DidesError::NoConvergence { solver: "s", iterations: 1, residual: 1.0, trace: vec![1.0] };
        assert_eq!(CliError::from(nc).exit_code(), 3);
        assert_eq!(CliError::from(DidesError::Estimator("x".into())).exit_code(), 4);
        assert_eq!(CliError::Input("x".into()).to_json()["class"], "input");
    }
}
