use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LearnError, Phase};
use crate::data::Vocab;
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{AdamState, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"FQCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// Position of a ChaCha8 stream: enough to continue it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Stored as a decimal string; JSON numbers cannot hold a u128.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to serve a model or continue training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub phase: Phase,
    pub step: u64,
    pub rng: RngState,
    /// Optimizer moments; present so a resumed run matches an uninterrupted one.
    pub adam: Option<AdamState>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamMeta {
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    model: ModelConfig,
    vocab: Vocab,
    phase: Phase,
    step: u64,
    rng: RngState,
    adam: Option<AdamMeta>,
    tensors: Vec<TensorEntry>,
    blob_len: u64,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn push_tensor(entries: &mut Vec<TensorEntry>, blob: &mut Vec<u8>, name: String, t: &Tensor) {
    let start = blob.len();
    for v in t.data() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    entries.push(TensorEntry {
        name,
        shape: t.shape().to_vec(),
        offset: start as u64,
        len: (blob.len() - start) as u64,
        sha256: hex_digest(&blob[start..]),
    });
}

impl Checkpoint {
    /// Layout: magic, version (u32 LE), manifest length (u64 LE), JSON
    /// manifest, then the little-endian `f64` tensor blob.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut blob = Vec::new();
        for (_, name, t) in self.params.store.iter() {
            push_tensor(&mut entries, &mut blob, name.to_string(), t);
        }
        let adam = self.adam.as_ref().map(|a| {
            for (i, (_, name, _)) in self.params.store.iter().enumerate() {
                push_tensor(&mut entries, &mut blob, format!("adam.m/{name}"), &a.m[i]);
                push_tensor(&mut entries, &mut blob, format!("adam.v/{name}"), &a.v[i]);
            }
            AdamMeta {
                step: a.step,
                lr: a.lr,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                weight_decay: a.weight_decay,
            }
        });
        let manifest = Manifest {
            version: FORMAT_VERSION,
            model: self.params.config.clone(),
            vocab: self.vocab.clone(),
            phase: self.phase,
            step: self.step,
            rng: self.rng.clone(),
            adam,
            tensors: entries,
            blob_len: blob.len() as u64,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(20 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LearnError> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(LearnError::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(LearnError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let json_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(20..20usize.saturating_add(json_len))
            .ok_or_else(|| LearnError::Checksum("file truncated inside the manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(json)
            .map_err(|e| LearnError::Checksum(format!("manifest unreadable: {e}")))?;
        let blob = &bytes[20 + json_len..];
        if blob.len() as u64 != manifest.blob_len {
            return Err(LearnError::Checksum(format!(
                "tensor data is {} bytes, manifest says {}",
                blob.len(),
                manifest.blob_len
            )));
        }

        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let end = e
                .offset
                .checked_add(e.len)
                .filter(|&end| end <= blob.len() as u64);
            let raw = end
                .map(|end| &blob[e.offset as usize..end as usize])
                .ok_or_else(|| LearnError::Checksum(format!("{}: out of bounds", e.name)))?;
            if hex_digest(raw) != e.sha256 {
                return Err(LearnError::Checksum(format!("{}: digest mismatch", e.name)));
            }
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(e.shape.clone(), data)
                .map_err(|err| LearnError::Format(format!("{}: {err}", e.name)))?;
            tensors.push((e.name.clone(), t));
        }

        let mut store = ParamStore::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in tensors {
            if name.starts_with("adam.m/") {
                m.push(t);
            } else if name.starts_with("adam.v/") {
                v.push(t);
            } else {
                store.insert(name, t);
            }
        }
        let params = ModelParams::from_store(manifest.model, store)?;
        let adam = match manifest.adam {
            Some(a) => {
                let state = AdamState {
                    step: a.step,
                    m,
                    v,
                    lr: a.lr,
                    beta1: a.beta1,
                    beta2: a.beta2,
                    eps: a.eps,
                    weight_decay: a.weight_decay,
                };
                if !state.matches(&params.store) {
                    return Err(LearnError::Format(
                        "optimizer state does not fit the model".into(),
                    ));
                }
                Some(state)
            }
            None => None,
        };
        if params.config.vocab_size != manifest.vocab.len() {
            return Err(LearnError::Format(format!(
                "model expects {} tokens, vocabulary has {}",
                params.config.vocab_size,
                manifest.vocab.len()
            )));
        }
        Ok(Self {
            params,
            vocab: manifest.vocab,
            phase: manifest.phase,
            step: manifest.step,
            rng: manifest.rng,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| LearnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let bytes = std::fs::read(path).map_err(|e| LearnError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
