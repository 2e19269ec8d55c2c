//! The HArch network: encoder backbone, shared linear+dropout trunk, three
//! classification heads, two augmentation blocks and the learnable mixing
//! scalars alpha, beta1, beta2; plus the single-head ablation variant.

mod encoder;
mod net;

pub use encoder::{build_encoder, Encoder, StubEncoder};
pub use net::{
    gelu, gelu_prime, softmax, AugBlock, ForwardCache, HArchGrads, HArchOutput, HArchParams,
    IndividualCache, IndividualGrads, IndividualParams, Linear,
};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hierarchy::Level;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown encoder identifier: {0}")]
    UnknownEncoder(String),
    #[error("non-finite value in layer {0}")]
    NonFinite(&'static str),
    #[error("input has {found} dims, model expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("empty argument in instance {0}")]
    EmptyArgument(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Configuration of a model build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: String,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Initial value of alpha, beta1 and beta2.
    #[serde(default = "default_scalar_init")]
    pub scalar_init: f64,
    #[serde(default = "default_max_length")]
    pub max_length: usize,
}

fn default_dropout() -> f64 {
    0.1
}
fn default_scalar_init() -> f64 {
    0.25
}
fn default_max_length() -> usize {
    512
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: "stub-16".into(),
            dropout: default_dropout(),
            scalar_init: default_scalar_init(),
            max_length: default_max_length(),
        }
    }
}

impl ModelConfig {
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(self).expect("config serializes"));
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A full HArch model: encoder plus trainable head parameters.
pub struct HArchModel {
    pub encoder: Arc<dyn Encoder>,
    pub params: HArchParams,
    pub config: ModelConfig,
    pub seed: u64,
}

impl HArchModel {
    /// Builds an initialized model; all head parameters are drawn from a
    /// ChaCha stream seeded with `seed`, so identical seeds give identical
    /// initial parameters.
    pub fn build(config: ModelConfig, seed: u64) -> Result<HArchModel, ModelError> {
        let encoder = build_encoder(&config.encoder)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = HArchParams::init(encoder.dim(), config.scalar_init, &mut rng);
        Ok(HArchModel {
            encoder,
            params,
            config,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    /// Encodes an argument pair with the backbone's boundary convention.
    pub fn encode_pair(&self, item_id: &str, arg1: &str, arg2: &str) -> Result<Vec<f64>, ModelError> {
        let text = encode_pair_text(self.encoder.as_ref(), item_id, arg1, arg2, self.config.max_length)?;
        Ok(self.encoder.encode(&text))
    }

    /// Inference-mode forward: pure function of (params, pooled).
    pub fn infer(&self, pooled: &[f64]) -> Result<HArchOutput, ModelError> {
        let (out, _) = self.params.forward(pooled, None)?;
        Ok(out)
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let ckpt = Checkpoint {
            encoder: self.config.encoder.clone(),
            seed: self.seed,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            params: self.params.clone(),
        };
        let json = serde_json::to_string(&ckpt).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<HArchModel, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ckpt.config_hash != ckpt.config.hash() {
            return Err(ModelError::Checkpoint("config hash mismatch".into()));
        }
        let encoder = build_encoder(&ckpt.config.encoder)?;
        if encoder.dim() != ckpt.params.dim() {
            return Err(ModelError::Checkpoint("parameter shapes do not match encoder".into()));
        }
        Ok(HArchModel {
            encoder,
            params: ckpt.params,
            config: ckpt.config,
            seed: ckpt.seed,
        })
    }
}

/// Single-file checkpoint: all tensors plus encoder identifier, seed and
/// config hash. Loading reproduces inference outputs bitwise.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    encoder: String,
    seed: u64,
    config_hash: String,
    config: ModelConfig,
    params: HArchParams,
}

/// The single-head ablation model: encoder, shared trunk, one head.
pub struct IndividualModel {
    pub encoder: Arc<dyn Encoder>,
    pub params: IndividualParams,
    pub level: Level,
    pub config: ModelConfig,
    pub seed: u64,
}

impl IndividualModel {
    pub fn build(config: ModelConfig, level: Level, seed: u64) -> Result<IndividualModel, ModelError> {
        let encoder = build_encoder(&config.encoder)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = IndividualParams::init(encoder.dim(), level, &mut rng);
        Ok(IndividualModel {
            encoder,
            params,
            level,
            config,
            seed,
        })
    }

    pub fn encode_pair(&self, item_id: &str, arg1: &str, arg2: &str) -> Result<Vec<f64>, ModelError> {
        let text = encode_pair_text(self.encoder.as_ref(), item_id, arg1, arg2, self.config.max_length)?;
        Ok(self.encoder.encode(&text))
    }

    pub fn infer(&self, pooled: &[f64]) -> Result<crate::hierarchy::SenseDistribution, ModelError> {
        let (p, _) = self.params.forward(pooled, None)?;
        Ok(p)
    }
}

/// Deterministic pair text: `ARG1 <boundary> ARG2`, truncated to the
/// encoder's token budget (whitespace tokens). Truncations are logged with
/// the item id.
pub fn encode_pair_text(
    encoder: &dyn Encoder,
    item_id: &str,
    arg1: &str,
    arg2: &str,
    max_length: usize,
) -> Result<String, ModelError> {
    if arg1.trim().is_empty() || arg2.trim().is_empty() {
        return Err(ModelError::EmptyArgument(item_id.to_string()));
    }
    let text = format!("{arg1}{}{arg2}", encoder.pair_boundary());
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() > max_length {
        log::warn!("truncating {item_id}: {} tokens > budget {max_length}", tokens.len());
        Ok(tokens[..max_length].join(" "))
    } else {
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::Level;

    #[test]
    fn same_seed_same_init() {
        let a = HArchModel::build(ModelConfig::default(), 7).unwrap();
        let b = HArchModel::build(ModelConfig::default(), 7).unwrap();
        assert_eq!(a.params.flatten(), b.params.flatten());
        let c = HArchModel::build(ModelConfig::default(), 8).unwrap();
        assert_ne!(a.params.flatten(), c.params.flatten());
    }

    #[test]
    fn head_shapes_follow_dim() {
        let config = ModelConfig {
            encoder: "stub-768".into(),
            ..ModelConfig::default()
        };
        let m = HArchModel::build(config, 0).unwrap();
        assert_eq!((m.params.head1.rows, m.params.head1.cols), (4, 768));
        assert_eq!((m.params.head2.rows, m.params.head2.cols), (17, 768));
        assert_eq!((m.params.head3.rows, m.params.head3.cols), (28, 768));
        // Augmentation hidden size is half the embedding space.
        assert_eq!((m.params.aug1.fc1.rows, m.params.aug1.fc1.cols), (384, 4));
        assert_eq!((m.params.aug1.fc2.rows, m.params.aug1.fc2.cols), (768, 384));
        assert_eq!((m.params.aug2.fc1.rows, m.params.aug2.fc1.cols), (384, 17));
    }

    #[test]
    fn stub_model_runs() {
        let config = ModelConfig {
            encoder: "stub-8".into(),
            ..ModelConfig::default()
        };
        let m = HArchModel::build(config, 1).unwrap();
        let pooled = m.encode_pair("t", "a", "b").unwrap();
        let out = m.infer(&pooled).unwrap();
        assert_eq!(out.p1.values.len(), 4);
        assert_eq!(out.p2.values.len(), 17);
        assert_eq!(out.p3.values.len(), 28);
    }

    #[test]
    fn unknown_encoder_rejected() {
        let config = ModelConfig {
            encoder: "no-such-backbone".into(),
            ..ModelConfig::default()
        };
        assert!(matches!(
            HArchModel::build(config, 0),
            Err(ModelError::UnknownEncoder(_))
        ));
    }

    #[test]
    fn empty_argument_rejected() {
        let m = HArchModel::build(ModelConfig::default(), 0).unwrap();
        assert!(matches!(
            m.encode_pair("x", "a", ""),
            Err(ModelError::EmptyArgument(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = HArchModel::build(ModelConfig::default(), 42).unwrap();
        m.save_checkpoint(&path).unwrap();
        let loaded = HArchModel::load_checkpoint(&path).unwrap();
        assert_eq!(m.params.flatten(), loaded.params.flatten());
        let pooled = m.encode_pair("t", "one two", "three four").unwrap();
        let a = m.infer(&pooled).unwrap();
        let b = loaded.infer(&pooled).unwrap();
        assert_eq!(a.p3.values, b.p3.values);
    }

    #[test]
    fn individual_builds_at_each_level() {
        for level in [Level::One, Level::Two, Level::Three] {
            let m = IndividualModel::build(ModelConfig::default(), level, 3).unwrap();
            let pooled = m.encode_pair("t", "a", "b").unwrap();
            let p = m.infer(&pooled).unwrap();
            assert_eq!(p.values.len(), level.count());
        }
    }
}
