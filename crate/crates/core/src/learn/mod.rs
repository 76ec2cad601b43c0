//! Pre-training, fine-tuning and checkpoints.

mod checkpoint;
mod config;
mod train;

use std::path::Path;

pub use checkpoint::{Checkpoint, RngState, FORMAT_VERSION, MAGIC};
pub use config::{pairs_to_map, parse_overrides, Phase, TrainConfig};
pub use train::{finetune, pretrain, Init, LogRecord, TrainOutcome, Trainer};

use crate::data::DataError;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::retrieve::RetrieveError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearnError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("corpus has no usable documents")]
    EmptyCorpus,
    #[error("non-finite loss {loss} at step {step}; aborting")]
    NonFinite { step: u64, loss: f64 },
    #[error("checkpoint checksum error: {0}")]
    Checksum(String),
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
}

impl LearnError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        LearnError::Io(format!("{}: {e}", path.display()))
    }
}
