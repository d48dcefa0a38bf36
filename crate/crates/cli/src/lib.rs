//! Operator surface for the engine: CLI subcommands and the HTTP service.

pub mod cli;
pub mod commands;
pub mod service;

use serde::Serialize;

/// User errors exit 1, internal errors exit 2; both print one JSON error
/// object on stderr.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    pub fn to_stderr_json(&self) -> String {
        #[derive(Serialize)]
        struct ErrorBody<'a> {
            kind: &'a str,
            message: &'a str,
        }
        #[derive(Serialize)]
        struct ErrorDoc<'a> {
            error: ErrorBody<'a>,
        }
        let (kind, message) = match self {
            CliError::User(m) => ("user", m.as_str()),
            CliError::Internal(m) => ("internal", m.as_str()),
        };
        serde_json::to_string(&ErrorDoc {
            error: ErrorBody { kind, message },
        })
        .expect("error serializes")
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<ghar_core::engine::EngineError> for CliError {
    fn from(e: ghar_core::engine::EngineError) -> Self {
        use ghar_core::engine::EngineError as E;
        match e {
            E::Config(_)
            | E::Kg(_)
            | E::MissingPath(_)
            | E::MissingGold { .. }
            | E::StaleIndex { .. } => CliError::User(e.to_string()),
            E::Io(_) | E::Retriever(_) | E::Provider(_) | E::References(_) => {
                CliError::Internal(e.to_string())
            }
        }
    }
}

impl From<ghar_core::config::ConfigError> for CliError {
    fn from(e: ghar_core::config::ConfigError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<ghar_core::kg::KgError> for CliError {
    fn from(e: ghar_core::kg::KgError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<ghar_core::tasks::TaskError> for CliError {
    fn from(e: ghar_core::tasks::TaskError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<ghar_core::trajectory::TrajectoryError> for CliError {
    fn from(e: ghar_core::trajectory::TrajectoryError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<ghar_core::rl::RlError> for CliError {
    fn from(e: ghar_core::rl::RlError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(format!("io error: {e}"))
    }
}
