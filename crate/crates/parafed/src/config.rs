//! Experiment configuration, stored as flat `key = value` TOML.

use std::path::Path;

use parafed_core::federation::{QueryConfig, SiloConfig};
use parafed_core::rng::mix64;
use parafed_core::selection::SelectionConfig;
use parafed_core::toylm::{AdapterTrainConfig, MaskTrainConfig, ModelConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::min_vocab;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub vocab_size: usize,
    /// Model width.
    pub d: usize,
    /// Retrieval embedding width.
    pub embed_dim: usize,
    pub rank: usize,
    /// Documents per cluster adapter.
    pub cap: usize,
    pub silos: usize,
    pub dirichlet_alpha: f64,
    pub num_topics: usize,
    pub facts_per_topic: usize,
    /// Documents stating each fact.
    pub doc_replicas: usize,
    /// Random tokens appended to each query.
    pub query_noise: usize,
    pub rewrites: usize,
    pub qa_pairs: usize,
    /// Retrieval depth per silo.
    pub k: usize,
    pub k_prime: usize,
    pub lambda_ol: f64,
    pub tau: f64,
    /// Sigmoid sharpening of the mask logits.
    pub mask_alpha: f64,
    pub lambda_l1: f64,
    pub adapter_epochs: usize,
    pub adapter_lr: f64,
    pub mask_epochs: usize,
    pub mask_lr: f64,
    pub rescale: bool,
    pub use_masks: bool,
    pub use_selection: bool,
    pub use_clustering: bool,
    pub max_answer_len: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            d: 64,
            embed_dim: 64,
            rank: 4,
            cap: 8,
            silos: 4,
            dirichlet_alpha: 0.1,
            num_topics: 8,
            facts_per_topic: 10,
            doc_replicas: 1,
            query_noise: 0,
            rewrites: 3,
            qa_pairs: 2,
            k: 5,
            k_prime: 3,
            lambda_ol: 1.0,
            tau: 0.75,
            mask_alpha: 4.0,
            lambda_l1: 0.01,
            adapter_epochs: 20,
            adapter_lr: 0.1,
            mask_epochs: 20,
            mask_lr: 0.5,
            rescale: false,
            use_masks: true,
            use_selection: true,
            use_clustering: true,
            max_answer_len: 4,
            kmeans_iters: 50,
            seed: 0,
        }
    }
}

fn bad(msg: String) -> Error {
    Error::Config(msg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d", self.d),
            ("embed_dim", self.embed_dim),
            ("rank", self.rank),
            ("cap", self.cap),
            ("silos", self.silos),
            ("num_topics", self.num_topics),
            ("facts_per_topic", self.facts_per_topic),
            ("doc_replicas", self.doc_replicas),
            ("rewrites", self.rewrites),
            ("k", self.k),
            ("k_prime", self.k_prime),
            ("max_answer_len", self.max_answer_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(bad(format!("{name} must be positive")));
        }
        if self.rank > self.d {
            return Err(bad(format!("rank {} exceeds d {}", self.rank, self.d)));
        }
        let need = min_vocab(self.num_topics, self.facts_per_topic);
        if self.vocab_size < need {
            return Err(bad(format!("vocab_size {} is below the {} the corpus needs", self.vocab_size, need)));
        }
        let reals = [
            ("dirichlet_alpha", self.dirichlet_alpha, false),
            ("mask_alpha", self.mask_alpha, false),
            ("adapter_lr", self.adapter_lr, false),
            ("mask_lr", self.mask_lr, false),
            ("lambda_ol", self.lambda_ol, true),
            ("lambda_l1", self.lambda_l1, true),
        ];
        for (name, v, zero_ok) in reals {
            if !(v.is_finite() && (v > 0.0 || (zero_ok && v == 0.0))) {
                return Err(bad(format!("{name} = {v} is out of range")));
            }
        }
        if !self.tau.is_finite() {
            return Err(bad("tau must be finite".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.vocab_size, self.d, mix64(self.seed ^ 0x70_0001))
    }

    pub fn silo_config(&self, cap: usize, train_masks: bool) -> SiloConfig {
        SiloConfig {
            cap,
            embed_dim: self.embed_dim,
            embed_seed: mix64(self.seed ^ 0x70_0002),
            rewrites: self.rewrites,
            qa_pairs: self.qa_pairs,
            adapter: AdapterTrainConfig {
                rank: self.rank,
                epochs: self.adapter_epochs,
                lr: self.adapter_lr,
                init_scale: AdapterTrainConfig::default().init_scale,
                seed: mix64(self.seed ^ 0x70_0003),
            },
            mask: MaskTrainConfig {
                alpha: self.mask_alpha,
                lambda_l1: self.lambda_l1,
                epochs: self.mask_epochs,
                lr: self.mask_lr,
                init_logit: MaskTrainConfig::default().init_logit,
                seed: mix64(self.seed ^ 0x70_0004),
            },
            train_masks,
            kmeans_iters: self.kmeans_iters,
            seed: mix64(self.seed ^ 0x70_0005),
        }
    }

    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig { k_prime: self.k_prime, lambda_ol: self.lambda_ol, tau: self.tau }
    }

    pub fn query_config(&self) -> QueryConfig {
        QueryConfig {
            k: self.k,
            selection: self.selection(),
            selection_enabled: self.use_selection,
            rescale: self.rescale,
            max_answer_len: self.max_answer_len,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_hash() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        assert_ne!(cfg.clone().with_seed(1).hash(), cfg.hash());
    }

    #[test]
    fn partial_files_take_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 7\ncap = 4\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.cap, 4);
        assert_eq!(cfg.d, 64);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("cap = 0").is_err());
        assert!(ExperimentConfig::from_toml("dirichlet_alpha = -1.0").is_err());
        assert!(ExperimentConfig::from_toml("rank = 80").is_err());
        assert!(ExperimentConfig::from_toml("no_such_key = 1").is_err());
        assert!(ExperimentConfig::from_toml("vocab_size = 40").is_err());
    }
}
