use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::MAX_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    /// Query and OCR tokens share one encoder.
    Joint,
    /// Encoder sees OCR tokens only; the query is a bag of static embeddings.
    Baseline,
}

impl std::str::FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(Self::Joint),
            "baseline" => Ok(Self::Baseline),
            other => Err(format!("unknown arch {other:?} (joint|baseline)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding and hidden width.
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    /// Adds a learned reading-order embedding; off by default.
    pub use_1d_positions: bool,
    /// Adds a two-entry query/OCR segment embedding.
    pub use_segment: bool,
    pub arch: Arch,
    pub ln_eps: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            d: 64,
            layers: 4,
            heads: 4,
            ffn_mult: 4,
            vocab_size,
            max_len: MAX_LEN,
            use_1d_positions: false,
            use_segment: true,
            arch: Arch::Joint,
            ln_eps: 1e-12,
        }
    }

    /// Width 768, 12 layers, 12 heads.
    pub fn paper_scale(vocab_size: usize) -> Self {
        Self {
            d: 768,
            layers: 12,
            heads: 12,
            ..Self::new(vocab_size)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "width {} is not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(ModelError::Config("at least one layer is required".into()));
        }
        if self.vocab_size <= crate::data::NUM_RESERVED {
            return Err(ModelError::Config(
                "vocabulary has no content tokens".into(),
            ));
        }
        if self.ffn_mult == 0 || self.max_len == 0 {
            return Err(ModelError::Config(
                "ffn_mult and max_len must be positive".into(),
            ));
        }
        Ok(())
    }
}
