//! Layout-only transformer encoder with a query/word pairing head.

mod config;
mod forward;
mod params;

pub use config::{Arch, ModelConfig};
pub use forward::{
    baseline_logits, baseline_score, bce_loss, embed, encode, forward_logits, joint_logits,
    mlm_logits, mlm_loss, pair_logits, pool_query, retrieval_loss, score_tokens, self_attention,
};
pub use params::{
    truncated_normal, LayerIds, ModelParams, ParamIds, INIT_STD, LOC_BUCKETS, LOC_NAMES,
};

use crate::data::DataError;
use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("model is {found:?}, operation needs {expected:?}")]
    ArchMismatch { expected: Arch, found: Arch },
    #[error("query has no tokens")]
    EmptyQuery,
    #[error("no masked positions")]
    NoMaskedPositions,
    #[error("box {0} outside the 0..=1000 page")]
    Coordinate(String),
    #[error("token id {0} outside the vocabulary")]
    Token(u32),
    #[error("empty input")]
    EmptyInput,
}
