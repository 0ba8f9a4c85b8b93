//! Front end for the hpgnn crate: run configuration, checkpoints and the
//! `train` / `eval` / `infer` / `graph-stats` / `ablate` commands.

pub mod checkpoint;
pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use commands::{
    cmd_ablate, cmd_eval, cmd_graphstats, cmd_infer, cmd_train, AblationRow, AblationTable,
    TrainSummary,
};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint does not match the config: {0}")]
    IncompatibleCheckpoint(String),
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("scene {0}: {1}")]
    Scene(String, Box<CliError>),
    #[error(transparent)]
    Data(#[from] hpgnn::data::DataError),
    #[error(transparent)]
    Model(#[from] hpgnn::model::ModelError),
    #[error(transparent)]
    Train(#[from] hpgnn::train::TrainError),
    #[error(transparent)]
    Metrics(#[from] hpgnn::metrics::MetricsError),
    #[error(transparent)]
    Loss(#[from] hpgnn::loss::LossError),
    #[error(transparent)]
    Nn(#[from] hpgnn::nncore::NnError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
