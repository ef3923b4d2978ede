//! Generative next-utterance models: a recurrent encoder–decoder, its
//! decoder-only language-model mode, and the profile-memory decoder that
//! attends over inverse-frequency weighted persona sentence encodings.

mod io;
mod lstm;
mod network;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Example;
use crate::rankers::Ranker;
use crate::textrep::{Vocabulary, ZipfWeights};

pub use io::{load_text_vectors, read_gen_model, write_gen_model, GEN_MAGIC};
pub use lstm::{cell_backward, cell_step, CellCache, CellWeights};
pub use network::{
    attend_step, decode_word_dist, encode_profile, example_loss, example_loss_and_grad, AttentionStep,
    ProfileMemory, TokenLoss,
};
pub use train::{sgd_update, train_generative, train_params, TrainHistory};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("no training examples")]
    EmptyExamples,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("candidate has no tokens")]
    EmptyCandidate,
    #[error("invalid generative config: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMode {
    Seq2Seq,
    Lm,
    ProfileMemory,
}

impl GenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GenMode::Seq2Seq => "seq2seq",
            GenMode::Lm => "lm",
            GenMode::ProfileMemory => "profile_memory",
        }
    }

    fn code(self) -> u8 {
        match self {
            GenMode::Seq2Seq => 0,
            GenMode::Lm => 1,
            GenMode::ProfileMemory => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => GenMode::Seq2Seq,
            1 => GenMode::Lm,
            2 => GenMode::ProfileMemory,
            _ => return None,
        })
    }
}

impl fmt::Display for GenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "seq2seq" => Ok(GenMode::Seq2Seq),
            "lm" => Ok(GenMode::Lm),
            "profile_memory" | "profile-memory" => Ok(GenMode::ProfileMemory),
            other => Err(format!("unknown generative mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub hidden: usize,
    pub emb_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mode: GenMode,
    pub max_decode_len: usize,
    pub init_scale: f64,
    pub clip_norm: f64,
    /// Examples averaged per update.
    pub batch_size: usize,
    /// Per-epoch learning rate is `learning_rate / (1 + lr_decay * epoch)`.
    pub lr_decay: f64,
    /// Only the most recent source tokens are encoded.
    pub max_source_tokens: usize,
    /// Divide candidate log-likelihoods by their token count when ranking.
    pub length_normalize: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            hidden: 64,
            emb_dim: 64,
            learning_rate: 0.3,
            epochs: 20,
            seed: 0,
            mode: GenMode::Seq2Seq,
            max_decode_len: 15,
            init_scale: 0.1,
            clip_norm: 5.0,
            batch_size: 1,
            lr_decay: 0.0,
            max_source_tokens: 256,
            length_normalize: false,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Config(m.to_owned()));
        if self.hidden == 0 || self.emb_dim == 0 {
            return bad("hidden and emb_dim must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.init_scale >= 0.0) || !(self.clip_norm > 0.0) {
            return bad("init_scale must be non-negative and clip_norm positive");
        }
        if self.batch_size == 0 || self.lr_decay < 0.0 {
            return bad("batch_size must be positive and lr_decay non-negative");
        }
        if self.max_source_tokens == 0 {
            return bad("max_source_tokens must be positive");
        }
        Ok(())
    }
}

/// Named parameter blocks, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    /// `K × e` input embeddings; also encode profile memories.
    pub emb: Vec<f64>,
    /// `4h × (e + h)` encoder cell weights and `4h` bias.
    pub enc_w: Vec<f64>,
    pub enc_b: Vec<f64>,
    pub dec_w: Vec<f64>,
    pub dec_b: Vec<f64>,
    /// `K × h` output rows `w_j`.
    pub out_w: Vec<f64>,
    /// `e × h`, scores memories against the decoder state.
    pub att_wa: Vec<f64>,
    /// `e × 2e`, mixes the previous context with the input embedding.
    pub att_wc: Vec<f64>,
}

pub const BLOCK_NAMES: [&str; 8] = ["emb", "enc_w", "enc_b", "dec_w", "dec_b", "out_w", "att_wa", "att_wc"];

impl GenParams {
    pub fn zeros(vocab_size: usize, emb_dim: usize, hidden: usize) -> Self {
        let (k, e, h) = (vocab_size, emb_dim, hidden);
        GenParams {
            vocab_size,
            emb_dim,
            hidden,
            emb: vec![0.0; k * e],
            enc_w: vec![0.0; 4 * h * (e + h)],
            enc_b: vec![0.0; 4 * h],
            dec_w: vec![0.0; 4 * h * (e + h)],
            dec_b: vec![0.0; 4 * h],
            out_w: vec![0.0; k * h],
            att_wa: vec![0.0; e * h],
            att_wc: vec![0.0; e * 2 * e],
        }
    }

    /// Uniform `[-scale, scale]` init. The attention blocks draw from their
    /// own stream so every mode starts from identical shared blocks, and
    /// `W_c` starts near `[0 | I]` so that initially `x̂ ≈ tanh(x)`.
    pub fn random(vocab_size: usize, emb_dim: usize, hidden: usize, scale: f64, seed: u64) -> Self {
        let mut p = Self::zeros(vocab_size, emb_dim, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fill = |v: &mut Vec<f64>, rng: &mut ChaCha8Rng| {
            if scale > 0.0 {
                v.iter_mut().for_each(|x| *x = rng.random_range(-scale..=scale));
            }
        };
        fill(&mut p.emb, &mut rng);
        fill(&mut p.enc_w, &mut rng);
        fill(&mut p.dec_w, &mut rng);
        fill(&mut p.out_w, &mut rng);
        let mut att_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa77e_4710_0000_0001);
        fill(&mut p.att_wa, &mut att_rng);
        fill(&mut p.att_wc, &mut att_rng);
        for q in 0..emb_dim {
            p.att_wc[q * 2 * emb_dim + emb_dim + q] += 1.0;
        }
        p
    }

    pub fn blocks(&self) -> [&[f64]; 8] {
        [
            &self.emb,
            &self.enc_w,
            &self.enc_b,
            &self.dec_w,
            &self.dec_b,
            &self.out_w,
            &self.att_wa,
            &self.att_wc,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.emb,
            &mut self.enc_w,
            &mut self.enc_b,
            &mut self.dec_w,
            &mut self.dec_b,
            &mut self.out_w,
            &mut self.att_wa,
            &mut self.att_wc,
        ]
    }

    pub fn emb_row(&self, i: usize) -> &[f64] {
        &self.emb[i * self.emb_dim..(i + 1) * self.emb_dim]
    }

    pub fn enc_cell(&self) -> CellWeights<'_> {
        CellWeights {
            w: &self.enc_w,
            b: &self.enc_b,
            n_in: self.emb_dim,
            hidden: self.hidden,
        }
    }

    pub fn dec_cell(&self) -> CellWeights<'_> {
        CellWeights {
            w: &self.dec_w,
            b: &self.dec_b,
            n_in: self.emb_dim,
            hidden: self.hidden,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.blocks().iter().flat_map(|b| b.iter()).map(|x| x * x).sum()
    }
}

/// Token ids of one instance, arranged for the model's mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GenExample {
    /// Encoder input (decoder prefix in language-model mode).
    pub source: Vec<usize>,
    /// Profile sentences, used as memories in profile-memory mode.
    pub memories: Vec<Vec<usize>>,
    /// Reply tokens without the end-of-sequence marker.
    pub target: Vec<usize>,
}

impl GenExample {
    /// Seq2seq and language-model modes prepend the profile to the history;
    /// profile-memory mode keeps it apart as memories.
    pub fn build(
        vocab: &Vocabulary,
        mode: GenMode,
        context: &[String],
        profile: &[String],
        target: &str,
        max_source_tokens: usize,
    ) -> Self {
        let ctx = context.iter().flat_map(|s| vocab.encode(s));
        let (mut source, memories): (Vec<usize>, Vec<Vec<usize>>) = match mode {
            GenMode::ProfileMemory => (ctx.collect(), profile.iter().map(|s| vocab.encode(s)).collect()),
            GenMode::Seq2Seq | GenMode::Lm => (
                profile.iter().flat_map(|s| vocab.encode(s)).chain(ctx).collect(),
                Vec::new(),
            ),
        };
        if source.len() > max_source_tokens {
            source.drain(..source.len() - max_source_tokens);
        }
        GenExample {
            source,
            memories,
            target: vocab.encode(target),
        }
    }
}

/// A trained generative model bound to its vocabulary.
#[derive(Debug, Clone)]
pub struct GenModel {
    pub vocab: Vocabulary,
    pub zipf: ZipfWeights,
    pub params: GenParams,
    pub mode: GenMode,
    pub max_decode_len: usize,
    pub max_source_tokens: usize,
    pub length_normalize: bool,
}

impl GenModel {
    pub fn new(vocab: Vocabulary, params: GenParams, cfg: &GenConfig) -> Self {
        GenModel {
            zipf: ZipfWeights::from_vocab(&vocab),
            vocab,
            params,
            mode: cfg.mode,
            max_decode_len: cfg.max_decode_len,
            max_source_tokens: cfg.max_source_tokens,
            length_normalize: cfg.length_normalize,
        }
    }

    pub fn instance(&self, context: &[String], profile: &[String], target: &str) -> GenExample {
        GenExample::build(&self.vocab, self.mode, context, profile, target, self.max_source_tokens)
    }

    pub fn example(&self, ex: &Example) -> GenExample {
        self.instance(&ex.context, &ex.profile, &ex.gold)
    }

    /// Negative log-likelihood in nats of the gold reply plus its
    /// end-of-sequence marker, and that token count.
    pub fn nll(&self, ex: &Example) -> (f64, usize) {
        let g = self.example(ex);
        let n = g.target.len() + 1;
        (example_loss(&self.params, self.mode, &self.zipf, &g), n)
    }

    /// Per-token losses of the gold reply and its end marker.
    pub fn token_losses(&self, ex: &Example) -> Vec<TokenLoss> {
        network::teacher_forced_losses(&self.params, self.mode, &self.zipf, &self.example(ex))
    }

    /// Teacher-forced log-likelihood of the candidate's tokens. The end
    /// marker is not scored.
    pub fn score_candidate(
        &self,
        context: &[String],
        profile: &[String],
        candidate: &str,
    ) -> Result<f64, GenError> {
        let g = self.instance(context, profile, candidate);
        if g.target.is_empty() {
            return Err(GenError::EmptyCandidate);
        }
        let steps = network::teacher_forced_log_probs(&self.params, self.mode, &self.zipf, &g);
        let ll: f64 = steps[..g.target.len()].iter().sum();
        Ok(if self.length_normalize {
            ll / g.target.len() as f64
        } else {
            ll
        })
    }

    /// Per-step log-probabilities of the teacher-forced target, followed by
    /// that of the end marker.
    pub fn token_log_probs(&self, context: &[String], profile: &[String], candidate: &str) -> Vec<f64> {
        let g = self.instance(context, profile, candidate);
        network::teacher_forced_log_probs(&self.params, self.mode, &self.zipf, &g)
    }

    /// Argmax decoding (lowest index on ties) until the end marker or
    /// `max_len` tokens.
    pub fn greedy_decode_ids(&self, context: &[String], profile: &[String], max_len: usize) -> Vec<usize> {
        let g = self.instance(context, profile, "");
        network::greedy(&self.params, self.mode, &self.zipf, &g, max_len)
    }

    pub fn greedy_decode(&self, context: &[String], profile: &[String], max_len: usize) -> String {
        self.vocab.decode(&self.greedy_decode_ids(context, profile, max_len))
    }

    pub fn reply(&self, context: &[String], profile: &[String]) -> String {
        self.greedy_decode(context, profile, self.max_decode_len)
    }
}

impl Ranker for GenModel {
    fn score(&self, context: &[String], profile: &[String], candidates: &[String]) -> Vec<f64> {
        candidates
            .iter()
            .map(|c| self.score_candidate(context, profile, c).unwrap_or(f64::NEG_INFINITY))
            .collect()
    }
}
