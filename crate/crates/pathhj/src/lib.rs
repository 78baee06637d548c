//! Scenario configs, CSV/JSON artifacts and batch runners on top of `pathhj-core`.

pub mod config;
pub mod io;
pub mod run;

pub use config::Config;
pub use run::{run, Command, Outcome, Overrides};

/// Process exit statuses of the CLI.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const FAILED: i32 = 1;
    pub const INVALID_CONFIG: i32 = 2;
    pub const RESOURCE: i32 = 3;
    pub const RUNTIME: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Resource(String),
    #[error("io: {0}")]
    Io(String),
    #[error("{0}")]
    Numeric(pathhj_core::Error),
}

impl From<pathhj_core::Error> for RunError {
    fn from(e: pathhj_core::Error) -> Self {
        match e {
            pathhj_core::Error::Resource { .. } => RunError::Resource(e.to_string()),
            other => RunError::Numeric(other),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => exit::INVALID_CONFIG,
            RunError::Resource(_) => exit::RESOURCE,
            RunError::Io(_) | RunError::Numeric(_) => exit::RUNTIME,
        }
    }
}
