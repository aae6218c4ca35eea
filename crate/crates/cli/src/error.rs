use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] livecap_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("user {user}: {source}")]
    User {
        user: String,
        source: livecap_core::Error,
    },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("report schema mismatch: {0}")]
    Schema(String),

    #[error("output: {0}")]
    Output(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn for_user(user: &str) -> impl FnOnce(livecap_core::Error) -> CliError + '_ {
        move |source| CliError::User {
            user: user.to_string(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) | CliError::User { source: e, .. } => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "json",
            CliError::Scenario(_) => "scenario",
            CliError::Schema(_) => "schema_mismatch",
            CliError::Output(_) => "output",
        }
    }

    /// Machine-readable error document written to standard error.
    pub fn to_json(&self) -> serde_json::Value {
        let mut doc = json!({ "error": { "kind": self.kind(), "message": self.to_string() } });
        let core = match self {
            CliError::Core(e) => Some(e),
            CliError::User { user, source } => {
                doc["error"]["user"] = json!(user);
                Some(source)
            }
            _ => None,
        };
        match core {
            Some(livecap_core::Error::Unsatisfiable {
                best_service,
                best_outage,
                best_drop,
            }) => {
                doc["error"]["closest"] =
                    json!({ "S": best_service, "outage": best_outage, "drop": best_drop });
            }
            Some(livecap_core::Error::MalformedRow { row, .. }) => {
                doc["error"]["row"] = json!(row);
            }
            _ => {}
        }
        doc
    }
}
