//! Metrics, the conditioning-matrix harness and profile prediction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{build_examples, ConditioningMode, CorpusError, Episode, Example, Persona, Speaker, Variant};
use crate::generative::{GenModel, TokenLoss};
use crate::rankers::Ranker;
use crate::textrep::{cosine_sparse, tokenize, Dictionary, SparseVector, TextError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no examples to evaluate")]
    EmptyExamples,
    #[error("example {episode}/{turn}: gold index {gold_index} outside {n} candidates")]
    GoldOutOfRange {
        episode: String,
        turn: usize,
        gold_index: usize,
        n: usize,
    },
    #[error("persona pool has {have} usable personas, need {need}")]
    InsufficientPool { need: usize, have: usize },
    #[error("not enough distinct replies to sample {need} distractors")]
    InsufficientDistractors { need: usize },
    #[error("invalid eval config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Text(#[from] TextError),
}

fn check_example(e: &Example) -> Result<(), EvalError> {
    if e.gold_index >= e.candidates.len() {
        return Err(EvalError::GoldOutOfRange {
            episode: e.episode_id.clone(),
            turn: e.turn,
            gold_index: e.gold_index,
            n: e.candidates.len(),
        });
    }
    Ok(())
}

/// Fraction of examples whose top-ranked candidate is the gold reply.
pub fn hits_at_1<R: Ranker + ?Sized>(ranker: &R, examples: &[Example]) -> Result<f64, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptyExamples);
    }
    examples.iter().try_for_each(check_example)?;
    let hits: usize = examples
        .par_iter()
        .map(|e| usize::from(ranker.rank(e).top() == Some(e.gold_index)))
        .sum();
    Ok(hits as f64 / examples.len() as f64)
}

/// `exp(total NLL / total tokens)`, end markers counted.
///
/// With `1/p_t = s_t · exp(d_t)` per token this is computed as
/// `s_ref · exp(mean(ln(s_t / s_ref) + d_t))` for `s_ref = min s_t`, so a
/// uniform model over K words gives exactly K. Terms are summed in sorted
/// order, which makes the result independent of example order.
pub fn perplexity(model: &GenModel, examples: &[Example]) -> Result<f64, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptyExamples);
    }
    let losses: Vec<TokenLoss> = examples.par_iter().flat_map_iter(|e| model.token_losses(e)).collect();
    let s_ref = losses.iter().map(|l| l.sum_exp).fold(f64::INFINITY, f64::min);
    let mut terms: Vec<f64> = losses.iter().map(|l| (l.sum_exp / s_ref).ln() + l.gap).collect();
    terms.sort_by(f64::total_cmp);
    let mean = terms.iter().sum::<f64>() / terms.len() as f64;
    Ok(s_ref * mean.exp())
}

/// Token-multiset overlap F1; 0 when either side is empty.
pub fn f1(predicted: &str, gold: &str) -> f64 {
    let p = tokenize(predicted);
    let g = tokenize(gold);
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Mean F1 of greedy decodes against gold replies.
pub fn mean_f1(model: &GenModel, examples: &[Example]) -> Result<f64, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptyExamples);
    }
    let mut scores: Vec<f64> = examples
        .par_iter()
        .map(|e| f1(&model.reply(&e.context, &e.profile), &e.gold))
        .collect();
    scores.sort_by(f64::total_cmp);
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn digest_seed(seed: u64, parts: &[&[String]]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for part in parts {
        for s in *part {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        h.update([0xff]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Uniform random scores, reproducible from the seed and the example text.
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

impl Ranker for RandomScorer {
    fn score(&self, context: &[String], profile: &[String], candidates: &[String]) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(digest_seed(self.seed, &[context, profile, candidates]));
        candidates.iter().map(|_| rng.random::<f64>()).collect()
    }
}

/// Gives every example without candidates `n_distractors` replies drawn
/// from `pool` (excluding the gold text) and puts the gold at a random
/// position. Examples that already have candidates are left alone.
pub fn sample_candidates(
    examples: &mut [Example],
    pool: &[String],
    n_distractors: usize,
    seed: u64,
) -> Result<(), EvalError> {
    let mut unique: Vec<&String> = pool.iter().collect::<HashSet<_>>().into_iter().collect();
    unique.sort();
    for e in examples.iter_mut().filter(|e| e.candidates.is_empty()) {
        let others: Vec<&String> = unique.iter().copied().filter(|s| **s != e.gold).collect();
        if others.len() < n_distractors {
            return Err(EvalError::InsufficientDistractors { need: n_distractors });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(digest_seed(seed, &[&e.context, std::slice::from_ref(&e.gold)]));
        let mut cands: Vec<String> = others.choose_multiple(&mut rng, n_distractors).map(|s| (*s).clone()).collect();
        let pos = rng.random_range(0..=cands.len());
        cands.insert(pos, e.gold.clone());
        e.candidates = cands;
        e.gold_index = pos;
    }
    Ok(())
}

/// Like [`build_examples`], but episodes that store no candidates at all
/// contribute every turn after the first (from `side` if given) with seeded
/// sampled distractors.
pub fn build_eval_examples(
    episodes: &[Episode],
    mode: ConditioningMode,
    variant: Variant,
    side: Option<Speaker>,
    n_distractors: usize,
    seed: u64,
) -> Result<Vec<Example>, EvalError> {
    let mut out = build_examples(episodes, mode, variant, side)?;
    let pool: Vec<String> = episodes.iter().flat_map(|e| e.turns.iter().map(|t| t.text.clone())).collect();
    let mut extra = Vec::new();
    for ep in episodes.iter().filter(|e| {
        (e.variant() == Some(variant) || (mode == ConditioningMode::None && e.variant().is_none()))
            && !e.turns.iter().any(|t| t.is_labeled())
    }) {
        for (k, turn) in ep.turns.iter().enumerate().skip(1) {
            if side.is_some_and(|s| s != turn.speaker) {
                continue;
            }
            extra.push(Example {
                episode_id: ep.id.clone(),
                turn: k,
                speaker: turn.speaker,
                context: ep.turns[..k].iter().map(|t| t.text.clone()).collect(),
                profile: crate::corpus::profile_for(ep, turn.speaker, mode)?,
                gold: turn.text.clone(),
                candidates: Vec::new(),
                gold_index: 0,
            });
        }
    }
    if !extra.is_empty() {
        sample_candidates(&mut extra, &pool, n_distractors, seed)?;
        out.extend(extra);
        out.sort_by(|a, b| a.episode_id.cmp(&b.episode_id).then(a.turn.cmp(&b.turn)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_distractors: usize,
    pub modes: Vec<ConditioningMode>,
    pub variants: Vec<Variant>,
    pub seed: u64,
    /// Restrict examples to replies by one speaker.
    pub side: Option<Speaker>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_distractors: 19,
            modes: ConditioningMode::ALL.to_vec(),
            variants: vec![Variant::Original, Variant::Revised],
            seed: 0,
            side: None,
        }
    }
}

/// A model as the harness sees it.
#[derive(Clone)]
pub enum Evaluable {
    Ranker(Arc<dyn Ranker>),
    Generative(Arc<GenModel>),
}

/// One named model family with a trained instance per (mode, variant) cell.
#[derive(Clone)]
pub struct MatrixModel {
    pub name: String,
    pub cells: HashMap<(ConditioningMode, Variant), Evaluable>,
}

impl MatrixModel {
    pub fn new(name: impl Into<String>) -> Self {
        MatrixModel {
            name: name.into(),
            cells: HashMap::new(),
        }
    }

    pub fn with(mut self, mode: ConditioningMode, variant: Variant, model: Evaluable) -> Self {
        self.cells.insert((mode, variant), model);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub mode: ConditioningMode,
    pub variant: Variant,
    pub hits_at_1: Option<f64>,
    pub perplexity: Option<f64>,
    pub f1: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricLine<'a> {
    pub model: &'a str,
    pub mode: ConditioningMode,
    pub variant: Variant,
    pub metric: &'static str,
    pub value: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn cell_text(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.digits$}"))
}

impl EvalReport {
    pub fn row(&self, model: &str, mode: ConditioningMode, variant: Variant) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.mode == mode && r.variant == variant)
    }

    /// One line per metric and cell. Metrics a model does not produce are
    /// omitted; a missing cell yields a single `hits@1` line with a null value.
    pub fn metric_lines(&self) -> Vec<MetricLine<'_>> {
        let mut out = Vec::new();
        for r in &self.rows {
            let line = |metric, value| MetricLine {
                model: &r.model,
                mode: r.mode,
                variant: r.variant,
                metric,
                value,
                n: r.n,
            };
            if r.n == 0 && r.hits_at_1.is_none() {
                out.push(line("hits@1", None));
                continue;
            }
            out.push(line("hits@1", r.hits_at_1));
            if r.perplexity.is_some() {
                out.push(line("ppl", r.perplexity));
            }
            if r.f1.is_some() {
                out.push(line("f1", r.f1));
            }
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        self.metric_lines()
            .iter()
            .map(|l| serde_json::to_string(l).expect("metric lines serialize") + "\n")
            .collect()
    }

    /// Plain-text table: one line per (model, mode), a column group per
    /// persona variant.
    pub fn to_table(&self) -> String {
        let mut variants: Vec<Variant> = Vec::new();
        let mut keys: Vec<(String, ConditioningMode)> = Vec::new();
        for r in &self.rows {
            if !variants.contains(&r.variant) {
                variants.push(r.variant);
            }
            let k = (r.model.clone(), r.mode);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut header = vec!["Method".to_owned(), "Persona".to_owned()];
        for v in &variants {
            header.extend([format!("{v} ppl"), format!("{v} hits@1"), format!("{v} F1")]);
        }
        let mut lines = vec![header];
        for (model, mode) in &keys {
            let mut line = vec![model.clone(), mode.to_string()];
            for v in &variants {
                let r = self.row(model, *mode, *v);
                line.push(cell_text(r.and_then(|r| r.perplexity), 2));
                line.push(cell_text(r.and_then(|r| r.hits_at_1), 3));
                line.push(cell_text(r.and_then(|r| r.f1), 3));
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| if c < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        out
    }
}

/// Evaluates every model family over every requested (mode, variant) cell
/// of `episodes`. Cells without a model are reported empty.
pub fn run_matrix(episodes: &[Episode], models: &[MatrixModel], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    if cfg.n_distractors == 0 {
        return Err(EvalError::Config("n_distractors must be at least 1".into()));
    }
    let mut cache: BTreeMap<(ConditioningMode, Variant), Vec<Example>> = BTreeMap::new();
    let mut rows = Vec::new();
    for m in models {
        for &mode in &cfg.modes {
            for &variant in &cfg.variants {
                let Some(model) = m.cells.get(&(mode, variant)) else {
                    log::warn!("no {} model for mode {mode}, variant {variant}", m.name);
                    rows.push(EvalRow {
                        model: m.name.clone(),
                        mode,
                        variant,
                        hits_at_1: None,
                        perplexity: None,
                        f1: None,
                        n: 0,
                    });
                    continue;
                };
                let examples = match cache.entry((mode, variant)) {
                    std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                    std::collections::btree_map::Entry::Vacant(e) => e.insert(build_eval_examples(
                        episodes,
                        mode,
                        variant,
                        cfg.side,
                        cfg.n_distractors,
                        cfg.seed,
                    )?),
                };
                let mut row = EvalRow {
                    model: m.name.clone(),
                    mode,
                    variant,
                    hits_at_1: None,
                    perplexity: None,
                    f1: None,
                    n: examples.len(),
                };
                match model {
                    Evaluable::Ranker(r) => row.hits_at_1 = Some(hits_at_1(r.as_ref(), examples)?),
                    Evaluable::Generative(g) => {
                        row.hits_at_1 = Some(hits_at_1(g.as_ref(), examples)?);
                        row.perplexity = Some(perplexity(g, examples)?);
                        row.f1 = Some(mean_f1(g, examples)?);
                    }
                }
                rows.push(row);
            }
        }
    }
    Ok(EvalReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionLevel {
    Profile,
    Sentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilePredConfig {
    pub n_negatives: usize,
    pub level: PredictionLevel,
    /// Whose utterances are read.
    pub speaker: Speaker,
    /// Whose profile is predicted.
    pub target: Speaker,
    pub max_length: usize,
    pub seed: u64,
}

impl Default for ProfilePredConfig {
    fn default() -> Self {
        ProfilePredConfig {
            n_negatives: 100,
            level: PredictionLevel::Profile,
            speaker: Speaker::P1,
            target: Speaker::P1,
            max_length: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthPoint {
    pub length: usize,
    pub error_rate: f64,
    pub mean_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePredResult {
    pub error_rate: f64,
    pub mean_rank: f64,
    pub n_dialogues: usize,
    pub per_length: Vec<LengthPoint>,
}

struct PredInstance {
    utterances: Vec<SparseVector>,
    /// Candidate personas in tie-break order, each as one vector per sentence
    /// plus the whole-profile vector.
    candidates: Vec<(Vec<SparseVector>, SparseVector)>,
    true_index: usize,
}

fn profile_score(level: PredictionLevel, query: &SparseVector, cand: &(Vec<SparseVector>, SparseVector)) -> f64 {
    match level {
        PredictionLevel::Profile => cosine_sparse(query, &cand.1),
        PredictionLevel::Sentence if cand.0.is_empty() => 0.0,
        PredictionLevel::Sentence => {
            cand.0.iter().map(|s| cosine_sparse(query, s)).sum::<f64>() / cand.0.len() as f64
        }
    }
}

/// 1-based rank of the true profile: one plus the candidates scoring
/// strictly higher or tied but placed earlier in the shuffled order.
fn rank_of_true(inst: &PredInstance, level: PredictionLevel, n_utts: usize) -> usize {
    let mut query = SparseVector::default();
    for u in inst.utterances.iter().take(n_utts) {
        query = query.add(u);
    }
    let scores: Vec<f64> = inst.candidates.iter().map(|c| profile_score(level, &query, c)).collect();
    let t = scores[inst.true_index];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > t || (s == t && i < inst.true_index))
        .count()
}

/// Ranks the true persona of `cfg.target` against `cfg.n_negatives`
/// personas from `pool` using the tf-idf baseline over `cfg.speaker`'s
/// utterances. Returns the top-1 error rate (and mean rank) over all
/// utterances and for the first 1..=`max_length` utterances.
pub fn profile_prediction(
    dialogues: &[Episode],
    pool: &[Persona],
    cfg: &ProfilePredConfig,
) -> Result<ProfilePredResult, EvalError> {
    if cfg.n_negatives == 0 {
        return Err(EvalError::Config("n_negatives must be at least 1".into()));
    }
    let dialogues: Vec<&Episode> = dialogues
        .iter()
        .filter(|e| e.persona(cfg.target).is_some() && e.turns.iter().any(|t| t.speaker == cfg.speaker))
        .collect();
    if dialogues.is_empty() {
        return Err(EvalError::EmptyExamples);
    }
    let mut docs: Vec<&str> = pool.iter().flat_map(|p| p.sentences.iter().map(String::as_str)).collect();
    docs.extend(dialogues.iter().flat_map(|e| e.turns.iter().map(|t| t.text.as_str())));
    let dict = Dictionary::build(docs, 1)?;
    let encode_persona = |p: &Persona| {
        let sents: Vec<SparseVector> = p.sentences.iter().map(|s| dict.tfidf_text(s)).collect();
        let whole = dict.tfidf_text(&p.sentences.join(" "));
        (sents, whole)
    };

    let mut instances = Vec::with_capacity(dialogues.len());
    for ep in &dialogues {
        let truth = ep.persona(cfg.target).expect("filtered above");
        let negatives: Vec<&Persona> = pool
            .iter()
            .filter(|p| p.id != truth.id && p.sentences != truth.sentences)
            .collect();
        if negatives.len() < cfg.n_negatives {
            return Err(EvalError::InsufficientPool {
                need: cfg.n_negatives + 1,
                have: negatives.len() + 1,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(digest_seed(cfg.seed, &[std::slice::from_ref(&ep.id)]));
        let mut cands: Vec<&Persona> = negatives.choose_multiple(&mut rng, cfg.n_negatives).copied().collect();
        cands.push(truth);
        cands.shuffle(&mut rng);
        let true_index = cands.iter().position(|p| std::ptr::eq(*p, truth)).expect("truth was added");
        instances.push(PredInstance {
            utterances: ep
                .turns
                .iter()
                .filter(|t| t.speaker == cfg.speaker)
                .map(|t| dict.tfidf_text(&t.text))
                .collect(),
            candidates: cands.into_iter().map(encode_persona).collect(),
            true_index,
        });
    }

    let evaluate = |n_utts: usize| {
        let ranks: Vec<usize> = instances.par_iter().map(|i| rank_of_true(i, cfg.level, n_utts)).collect();
        let errors = ranks.iter().filter(|&&r| r != 1).count();
        let n = ranks.len() as f64;
        (errors as f64 / n, ranks.iter().sum::<usize>() as f64 / n)
    };
    let (error_rate, mean_rank) = evaluate(usize::MAX);
    let per_length = (1..=cfg.max_length)
        .map(|length| {
            let (error_rate, mean_rank) = evaluate(length);
            LengthPoint {
                length,
                error_rate,
                mean_rank,
            }
        })
        .collect();
    Ok(ProfilePredResult {
        error_rate,
        mean_rank,
        n_dialogues: instances.len(),
        per_length,
    })
}
