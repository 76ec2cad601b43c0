use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Arch, ModelConfig, ModelError};
use crate::data::PAGE_UNITS;
use crate::numerics::{ParamId, ParamStore, Tensor};

pub const INIT_STD: f64 = 0.02;

/// Rows in each coordinate table: one per integer position 0..=1000.
pub const LOC_BUCKETS: usize = PAGE_UNITS as usize + 1;

/// Order of the six location tables.
pub const LOC_NAMES: [&str; 6] = ["x0", "y0", "x1", "y1", "width", "height"];

#[derive(Debug, Clone, PartialEq)]
pub struct LayerIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

/// Handles into the parameter store, resolved from a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamIds {
    pub word: ParamId,
    pub loc: [ParamId; 6],
    pub segment: Option<ParamId>,
    pub pos1d: Option<ParamId>,
    pub emb_ln_gain: ParamId,
    pub emb_ln_bias: ParamId,
    pub layers: Vec<LayerIds>,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub mlm_w: ParamId,
    pub mlm_b: ParamId,
    pub baseline_query: Option<ParamId>,
}

enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Name, shape and initializer of every parameter, in registration order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.d;
    let f = cfg.d * cfg.ffn_mult;
    let v = cfg.vocab_size;
    let mut out = vec![("embed.word".to_string(), vec![v, d], Init::Normal)];
    for name in LOC_NAMES {
        out.push((
            format!("embed.loc.{name}"),
            vec![LOC_BUCKETS, d],
            Init::Normal,
        ));
    }
    if cfg.use_segment {
        out.push(("embed.segment".into(), vec![2, d], Init::Normal));
    }
    if cfg.use_1d_positions {
        out.push(("embed.pos1d".into(), vec![cfg.max_len, d], Init::Normal));
    }
    out.push(("embed.ln.gain".into(), vec![1, d], Init::Ones));
    out.push(("embed.ln.bias".into(), vec![1, d], Init::Zeros));
    for l in 0..cfg.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        for m in ["q", "k", "v", "o"] {
            out.push((p(&format!("attn.w{m}")), vec![d, d], Init::Normal));
            out.push((p(&format!("attn.b{m}")), vec![1, d], Init::Zeros));
        }
        out.push((p("ln1.gain"), vec![1, d], Init::Ones));
        out.push((p("ln1.bias"), vec![1, d], Init::Zeros));
        out.push((p("ffn.w1"), vec![d, f], Init::Normal));
        out.push((p("ffn.b1"), vec![1, f], Init::Zeros));
        out.push((p("ffn.w2"), vec![f, d], Init::Normal));
        out.push((p("ffn.b2"), vec![1, d], Init::Zeros));
        out.push((p("ln2.gain"), vec![1, d], Init::Ones));
        out.push((p("ln2.bias"), vec![1, d], Init::Zeros));
    }
    out.push(("head.fc.w".into(), vec![d, d], Init::Normal));
    out.push(("head.fc.b".into(), vec![1, d], Init::Zeros));
    out.push(("mlm.w".into(), vec![d, v], Init::Normal));
    out.push(("mlm.b".into(), vec![1, v], Init::Zeros));
    if cfg.arch == Arch::Baseline {
        out.push(("baseline.query".into(), vec![v, d], Init::Normal));
    }
    out
}

/// Standard deviation of a unit normal truncated to ±2.
const TRUNC2_STD: f64 = 0.879_625_661_034_239_8;

/// Draws from a normal truncated at two of its own standard deviations and
/// rescaled so the draws have standard deviation `std`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let z: f64 = normal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std / TRUNC2_STD;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub ids: ParamIds,
}

impl ModelParams {
    /// Fresh parameters: truncated normal (std 0.02) weights, zero biases,
    /// unit layer-norm gains. Deterministic for a given rng state.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        Self::init_with(config, rng, |_| None)
    }

    /// Like [`ModelParams::init`], but tensors present in `source` with the
    /// same name and shape are copied instead of drawn.
    pub fn adapt_from<R: Rng + ?Sized>(
        config: &ModelConfig,
        source: &ParamStore,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        Self::init_with(config, rng, |(name, shape)| {
            source.by_name(name).filter(|t| t.shape() == shape).cloned()
        })
    }

    fn init_with<R: Rng + ?Sized>(
        config: &ModelConfig,
        rng: &mut R,
        reuse: impl Fn((&str, &[usize])) -> Option<Tensor>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        for (name, shape, init) in layout(config) {
            let tensor = match reuse((&name, &shape)) {
                Some(t) => t,
                None => match init {
                    Init::Zeros => Tensor::zeros(&shape),
                    Init::Ones => Tensor::full(&shape, 1.0),
                    Init::Normal => {
                        let n = shape.iter().product();
                        let data = (0..n).map(|_| truncated_normal(rng, INIT_STD)).collect();
                        Tensor::new(shape, data)?
                    }
                },
            };
            store.insert(name, tensor);
        }
        Self::from_store(config.clone(), store)
    }

    /// Wraps an existing store, checking every expected tensor is present
    /// with the right shape.
    pub fn from_store(config: ModelConfig, mut store: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        store.reindex();
        let expected = layout(&config);
        if expected.len() != store.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                store.len()
            )));
        }
        for (name, shape, _) in &expected {
            match store.by_name(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(ModelError::Config(format!(
                        "{name}: shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(ModelError::Config(format!("missing parameter {name}"))),
            }
        }
        let id = |n: &str| store.id(n).expect("checked above");
        let layers = (0..config.layers)
            .map(|l| {
                let p = |s: &str| id(&format!("layer{l}.{s}"));
                LayerIds {
                    wq: p("attn.wq"),
                    bq: p("attn.bq"),
                    wk: p("attn.wk"),
                    bk: p("attn.bk"),
                    wv: p("attn.wv"),
                    bv: p("attn.bv"),
                    wo: p("attn.wo"),
                    bo: p("attn.bo"),
                    ln1_gain: p("ln1.gain"),
                    ln1_bias: p("ln1.bias"),
                    w1: p("ffn.w1"),
                    b1: p("ffn.b1"),
                    w2: p("ffn.w2"),
                    b2: p("ffn.b2"),
                    ln2_gain: p("ln2.gain"),
                    ln2_bias: p("ln2.bias"),
                }
            })
            .collect();
        let ids = ParamIds {
            word: id("embed.word"),
            loc: LOC_NAMES.map(|n| id(&format!("embed.loc.{n}"))),
            segment: store.id("embed.segment"),
            pos1d: store.id("embed.pos1d"),
            emb_ln_gain: id("embed.ln.gain"),
            emb_ln_bias: id("embed.ln.bias"),
            layers,
            head_w: id("head.fc.w"),
            head_b: id("head.fc.b"),
            mlm_w: id("mlm.w"),
            mlm_b: id("mlm.b"),
            baseline_query: store.id("baseline.query"),
        };
        let params = Self { config, store, ids };
        if !params.store.iter().all(|(_, _, t)| t.is_finite()) {
            return Err(ModelError::Config("non-finite parameter values".into()));
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            d: 16,
            layers: 2,
            heads: 2,
            ..ModelConfig::new(50)
        }
    }

    #[test]
    fn same_seed_same_params() {
        let a = ModelParams::init(&small(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = ModelParams::init(&small(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.store, b.store);
    }

    #[test]
    fn init_statistics() {
        let p = ModelParams::init(&small(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let w = p.store.get(p.ids.loc[0]).data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!(
            (var.sqrt() - INIT_STD).abs() < 0.1 * INIT_STD,
            "std {}",
            var.sqrt()
        );
        assert!(w.iter().all(|x| x.abs() <= 2.0 * INIT_STD / TRUNC2_STD));
        assert!(p
            .store
            .get(p.ids.layers[0].ln1_gain)
            .data()
            .iter()
            .all(|&g| g == 1.0));
        assert!(p.store.get(p.ids.head_b).data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn shapes_follow_config() {
        let mut cfg = small();
        cfg.arch = Arch::Baseline;
        cfg.use_1d_positions = true;
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.store.get(p.ids.word).shape(), &[50, 16]);
        assert_eq!(p.store.get(p.ids.loc[5]).shape(), &[1001, 16]);
        assert_eq!(p.store.get(p.ids.pos1d.unwrap()).shape(), &[512, 16]);
        assert_eq!(
            p.store.get(p.ids.baseline_query.unwrap()).shape(),
            &[50, 16]
        );
        assert_eq!(p.store.get(p.ids.layers[1].w1).shape(), &[16, 64]);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut cfg = small();
        cfg.heads = 3;
        assert!(ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn adapt_copies_shared_tensors() {
        let joint = ModelParams::init(&small(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut cfg = small();
        cfg.arch = Arch::Baseline;
        let base =
            ModelParams::adapt_from(&cfg, &joint.store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(
            base.store.get(base.ids.word),
            joint.store.get(joint.ids.word)
        );
        assert!(base.ids.baseline_query.is_some());
    }
}
