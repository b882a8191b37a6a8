use std::path::Path;

use featreg::{Error, NpyError};
use serde_json::{json, Value};

/// Exit status classes: 2 bad configuration or inputs, 3 file access,
/// 4 numerical failure.
#[derive(Debug)]
pub enum CliError {
    Config { field: Option<String>, message: String },
    Io { path: String, message: String },
    Lib(Error),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: Some(field.to_string()),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Lib(e) => match e {
                Error::Io { .. } | Error::Json { .. } | Error::Npy(_) => 3,
                Error::NumericalAbort { .. } | Error::NonFinite(_) | Error::Degenerate(_) | Error::EndpointMismatch(_) => 4,
                _ => 2,
            },
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = match self {
            CliError::Config { field, message } => json!({"kind": "config", "field": field, "message": message}),
            CliError::Io { path, message } => json!({"kind": "io", "path": path, "message": message}),
            CliError::Lib(e) => {
                let kind = match self.exit_code() {
                    3 => "io",
                    4 => "numerical",
                    _ => "input",
                };
                let mut v = json!({"kind": kind, "message": e.to_string()});
                match e {
                    Error::NumericalAbort {
                        iteration,
                        total,
                        intensity,
                        feature,
                        regularizer,
                    } => {
                        // non-finite numbers are not valid JSON, so terms are strings
                        v["iteration"] = json!(iteration);
                        v["terms"] = json!({
                            "total": total.to_string(),
                            "intensity": intensity.map(|x| x.to_string()),
                            "feature": feature.map(|x| x.to_string()),
                            "regularizer": regularizer.to_string(),
                        });
                    }
                    Error::Io { path, .. } | Error::Json { path, .. } | Error::Npy(NpyError::Io { path, .. }) => {
                        v["path"] = json!(path.display().to_string());
                    }
                    _ => {}
                }
                v
            }
        };
        v["exit_code"] = json!(self.exit_code());
        json!({ "error": v })
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<NpyError> for CliError {
    fn from(e: NpyError) -> Self {
        CliError::Lib(Error::Npy(e))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config { message, .. } => f.write_str(message),
            CliError::Io { path, message } => write!(f, "{path}: {message}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}
