//! Next-utterance rankers: the tf-idf baseline, the trained
//! bag-of-embeddings model, its profile-memory extension, and the
//! key-value memory variant built on top of a trained profile memory.

mod embedding;
mod io;
mod ir;
mod kv;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Example;

pub use embedding::{embed_sentence, profile_attend, EmbeddingMatrix, EmbeddingRanker};
pub use io::{read_kv_store, read_ranker, write_kv_store, write_ranker, RANKER_MAGIC};
pub use ir::IrRanker;
pub use kv::{kv_attend, kv_build, KvPair, KvRanker, KvStore, DEFAULT_TOP_M};
pub use train::{example_loss_and_grad, sgd_step, train_ranker, EncodedExample, RowGrads};

#[derive(Debug, Error)]
pub enum RankerError {
    #[error("no training examples")]
    EmptyExamples,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("key-value store is empty")]
    EmptyStore,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Candidates ordered by descending score; equal scores keep ascending
/// candidate index.
#[derive(Debug, Clone, PartialEq)]
pub struct RankResult(pub Vec<(usize, f64)>);

impl RankResult {
    pub fn from_scores(scores: &[f64]) -> Self {
        let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        RankResult(ranked)
    }

    pub fn top(&self) -> Option<usize> {
        self.0.first().map(|r| r.0)
    }

    pub fn order(&self) -> Vec<usize> {
        self.0.iter().map(|r| r.0).collect()
    }

    /// 1-based rank of a candidate.
    pub fn rank_of(&self, candidate: usize) -> Option<usize> {
        self.0.iter().position(|r| r.0 == candidate).map(|p| p + 1)
    }
}

/// Anything that scores reply candidates given a dialogue history and the
/// profile sentences it may condition on.
pub trait Ranker: Send + Sync {
    fn score(&self, context: &[String], profile: &[String], candidates: &[String]) -> Vec<f64>;

    fn rank(&self, example: &Example) -> RankResult {
        RankResult::from_scores(&self.score(&example.context, &example.profile, &example.candidates))
    }
}

impl<R: Ranker + ?Sized> Ranker for Box<R> {
    fn score(&self, context: &[String], profile: &[String], candidates: &[String]) -> Vec<f64> {
        (**self).score(context, profile, candidates)
    }
}

impl<R: Ranker + ?Sized> Ranker for std::sync::Arc<R> {
    fn score(&self, context: &[String], profile: &[String], candidates: &[String]) -> Vec<f64> {
        (**self).score(context, profile, candidates)
    }
}

/// Sum over negatives of `max(0, margin - sim_pos + sim_neg)`.
pub fn margin_loss(sim_pos: f64, sim_negs: &[f64], margin: f64) -> f64 {
    sim_negs
        .iter()
        .map(|&neg| (margin - sim_pos + neg).max(0.0))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub margin: f64,
    pub negatives: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hops: usize,
    pub init_scale: f64,
    /// One matrix for queries and candidates, or a separate candidate table.
    pub shared_embeddings: bool,
    pub l2: f64,
    /// Per-epoch learning rate is `learning_rate / (1 + lr_decay * epoch)`.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            margin: 0.2,
            negatives: 10,
            learning_rate: 0.05,
            epochs: 20,
            seed: 0,
            hops: 1,
            init_scale: 0.1,
            shared_embeddings: true,
            l2: 0.0,
            lr_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RankerError> {
        let bad = |m: &str| Err(RankerError::Config(m.to_owned()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.hops == 0 {
            return bad("hops must be at least 1");
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return bad("init_scale must be positive");
        }
        if self.l2 < 0.0 || self.lr_decay < 0.0 {
            return bad("l2 and lr_decay must be non-negative");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_arithmetic() {
        assert_eq!(margin_loss(0.9, &[0.3], 0.2), 0.0);
        assert!((margin_loss(0.1, &[0.4], 0.2) - 0.5).abs() < 1e-15);
        assert_eq!(margin_loss(0.9, &[0.1, -0.5, 0.0], 0.2), 0.0);
    }

    #[test]
    fn rank_ties_prefer_lower_index() {
        let r = RankResult::from_scores(&[0.5, 0.9, 0.5, 0.9]);
        assert_eq!(r.order(), vec![1, 3, 0, 2]);
        assert_eq!(r.rank_of(0), Some(3));
    }

    #[test]
    fn config_ranges() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig {
            margin: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            hops: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
