use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::LearnError;
use crate::data::{QueryMode, MAX_LEN};
use crate::model::{Arch, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        })
    }
}

/// Run configuration. Model shape fields only matter for a fresh model;
/// a pre-trained initialisation keeps the checkpoint's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Caps the step count below `epochs` worth of batches.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub mask_rate: f64,
    /// Held-out evaluation period in steps; 0 disables it.
    pub eval_every: u64,
    /// Checkpoint period in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
    pub query_mode: QueryMode,
    pub max_vocab: usize,
    pub max_len: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub arch: Arch,
    pub use_1d_positions: bool,
    pub use_segment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_phase(Phase::Finetune)
    }
}

impl TrainConfig {
    pub fn for_phase(phase: Phase) -> Self {
        let model = ModelConfig::new(0);
        Self {
            phase,
            lr: match phase {
                Phase::Pretrain => 5e-5,
                Phase::Finetune => 3e-5,
            },
            weight_decay: 0.01,
            batch_size: 8,
            epochs: 45,
            max_steps: None,
            seed: 0,
            mask_rate: 0.15,
            eval_every: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
            query_mode: QueryMode::ExactKey,
            max_vocab: 8000,
            max_len: MAX_LEN,
            d: model.d,
            layers: model.layers,
            heads: model.heads,
            ffn_mult: model.ffn_mult,
            arch: model.arch,
            use_1d_positions: model.use_1d_positions,
            use_segment: model.use_segment,
        }
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(LearnError::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(LearnError::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(LearnError::Config(format!(
                "mask_rate {} not in [0, 1]",
                self.mask_rate
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(LearnError::Config(
                "weight_decay must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Shape of a freshly initialised model for a vocabulary of `vocab_size`.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d: self.d,
            layers: self.layers,
            heads: self.heads,
            ffn_mult: self.ffn_mult,
            max_len: self.max_len,
            use_1d_positions: self.use_1d_positions,
            use_segment: self.use_segment,
            arch: self.arch,
            ..ModelConfig::new(vocab_size)
        }
    }

    /// Applies overrides on top of the defaults for the overrides' phase.
    pub fn from_map(overrides: Map<String, Value>) -> Result<Self, LearnError> {
        let phase = match overrides.get("phase") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| LearnError::Config(format!("phase: {e}")))?,
            None => Phase::Finetune,
        };
        let mut base = serde_json::to_value(Self::for_phase(phase)).expect("config serializes");
        let obj = base.as_object_mut().expect("config is an object");
        obj.extend(overrides);
        let cfg: Self =
            serde_json::from_value(base).map_err(|e| LearnError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads either a JSON object or `key=value` lines (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self, LearnError> {
        Self::from_map(parse_overrides(text)?)
    }

    /// `key=value` overrides. Values are read as JSON when they parse,
    /// otherwise as strings.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[S]) -> Result<Self, LearnError> {
        Self::from_map(pairs_to_map(pairs)?)
    }

    /// Layers `key=value` overrides over this config.
    pub fn with_pairs<S: AsRef<str>>(&self, pairs: &[S]) -> Result<Self, LearnError> {
        let mut map = match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        map.extend(pairs_to_map(pairs)?);
        Self::from_map(map)
    }
}

/// The settings of a config text as a JSON map, without applying defaults.
pub fn parse_overrides(text: &str) -> Result<Map<String, Value>, LearnError> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map_err(|e| LearnError::Config(e.to_string()));
    }
    let pairs: Vec<&str> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .collect();
    pairs_to_map(&pairs)
}

pub fn pairs_to_map<S: AsRef<str>>(pairs: &[S]) -> Result<Map<String, Value>, LearnError> {
    let mut map = Map::new();
    for p in pairs {
        let p = p.as_ref();
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| LearnError::Config(format!("expected key=value, got {p:?}")))?;
        let v = v.trim();
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        map.insert(k.trim().to_string(), value);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_phase() {
        assert_eq!(TrainConfig::for_phase(Phase::Pretrain).lr, 5e-5);
        let ft = TrainConfig::default();
        assert_eq!((ft.lr, ft.batch_size, ft.epochs), (3e-5, 8, 45));
    }

    #[test]
    fn key_value_and_json_agree() {
        let a = TrainConfig::parse("phase=pretrain\nlr=0.001 # desk scale\nd=32\narch=baseline")
            .unwrap();
        let b = TrainConfig::parse(r#"{"phase":"pretrain","lr":0.001,"d":32,"arch":"baseline"}"#)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.arch, Arch::Baseline);
        assert_eq!(a.weight_decay, 0.01);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::parse("lr=0").is_err());
        assert!(TrainConfig::parse("batch_size=0").is_err());
        assert!(TrainConfig::parse("no_such_key=1").is_err());
        assert!(TrainConfig::parse("garbage").is_err());
    }

    #[test]
    fn overrides_layer() {
        let c = TrainConfig::default()
            .with_pairs(&["seed=7", "checkpoint_dir=/tmp/x"])
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.checkpoint_dir, Some(PathBuf::from("/tmp/x")));
    }
}
