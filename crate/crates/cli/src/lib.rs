//! Command-line orchestration for the gam engine: synthetic data, preprocessing,
//! pooled and federated training, evaluation and exports.

pub mod cli;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod synth;

use std::path::Path;

use gam_core::fedsim::FedError;
use gam_core::ingest::IngestError;
use gam_core::tensor::TensorError;
use gam_core::train::TrainError;
use thiserror::Error;

pub use cli::{run, Cli, Command};
pub use config::{Overrides, Paths, RunConfig, SchedulerKind};
pub use synth::SynthSpec;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("fingerprint mismatch: {0}")]
    Fingerprint(String),
    #[error("training failed: {0}")]
    Training(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) | CliError::Io { .. } => 3,
            CliError::Data(_) => 4,
            CliError::Fingerprint(_) => 5,
            CliError::Training(_) => 6,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            TrainError::Format(m) => CliError::Data(m),
            other => CliError::Training(other.to_string()),
        }
    }
}

impl From<FedError> for CliError {
    fn from(e: FedError) -> Self {
        match e {
            FedError::Config(m) => CliError::Config(m),
            FedError::Train(t) => t.into(),
            other => CliError::Training(other.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Training(e.to_string())
    }
}
