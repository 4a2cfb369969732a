//! Configuration-driven experiment harness for the `dualgp` controller.

pub mod config;
pub mod harness;

use dualgp_core::{ControlError, EpisodeError};
use thiserror::Error;

pub use config::{resolve, ConfigError, EpisodeConfig, Scenario};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config:\n{0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error("model setup failed: {0}")]
    Model(ControlError),
    #[error("{0}")]
    Slice(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit code: 2 for a diverged plant, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Episode(e) if e.is_divergence() => 2,
            _ => 1,
        }
    }
}
