use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Example;
use crate::numeric::{axpy, cosine_with_grad, dot, softmax};
use crate::textrep::Vocabulary;

use super::embedding::{embed_sentence, EmbeddingMatrix, EmbeddingRanker};
use super::{RankerError, TrainConfig};

/// Token ids of one training example. Without profile attention the
/// profile tokens are already folded into `query` and `profile` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub query: Vec<usize>,
    pub profile: Vec<Vec<usize>>,
    pub positive: Vec<usize>,
}

impl EncodedExample {
    pub fn encode(ex: &Example, vocab: &Vocabulary, profile_attention: bool) -> Self {
        let mut query: Vec<usize> = ex.context.iter().flat_map(|s| vocab.encode(s)).collect();
        let profile: Vec<Vec<usize>> = ex.profile.iter().map(|s| vocab.encode(s)).collect();
        let profile = if profile_attention {
            profile
        } else {
            query.extend(profile.into_iter().flatten());
            Vec::new()
        };
        EncodedExample {
            query,
            profile,
            positive: vocab.encode(&ex.gold),
        }
    }
}

/// Sparse per-row gradients for the query-side and candidate-side tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowGrads {
    pub query: BTreeMap<usize, Vec<f64>>,
    pub cand: BTreeMap<usize, Vec<f64>>,
}

impl RowGrads {
    fn add(map: &mut BTreeMap<usize, Vec<f64>>, ids: &[usize], g: &[f64]) {
        for &i in ids {
            let row = map.entry(i).or_insert_with(|| vec![0.0; g.len()]);
            axpy(1.0, g, row);
        }
    }

    /// Gradient with respect to a single shared table.
    pub fn combined(&self) -> BTreeMap<usize, Vec<f64>> {
        let mut out = self.query.clone();
        for (i, g) in &self.cand {
            let row = out.entry(*i).or_insert_with(|| vec![0.0; g.len()]);
            axpy(1.0, g, row);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.query.is_empty() && self.cand.is_empty()
    }
}

/// Hinge-of-cosine loss of one example against fixed negatives, with the
/// analytic gradient accumulated into `grads` when given.
pub fn example_loss_and_grad(
    query_emb: &EmbeddingMatrix,
    cand_emb: &EmbeddingMatrix,
    ex: &EncodedExample,
    negatives: &[Vec<usize>],
    margin: f64,
    hops: usize,
    grads: Option<&mut RowGrads>,
) -> f64 {
    let d = query_emb.dim();
    let q0 = embed_sentence(&ex.query, query_emb);
    let memories: Vec<Vec<f64>> = ex.profile.iter().map(|p| embed_sentence(p, query_emb)).collect();

    // Forward through the hops, keeping each query and attention vector.
    let mut qs = vec![q0];
    let mut weights: Vec<Vec<f64>> = Vec::new();
    if !memories.is_empty() {
        for _ in 0..hops {
            let q = qs.last().unwrap();
            let sims: Vec<f64> = memories.iter().map(|p| cosine_with_grad(q, p).0).collect();
            let s = softmax(&sims);
            let mut next = q.clone();
            for (si, p) in s.iter().zip(&memories) {
                axpy(*si, p, &mut next);
            }
            weights.push(s);
            qs.push(next);
        }
    }
    let qf = qs.last().unwrap();

    let pos = embed_sentence(&ex.positive, cand_emb);
    let (sim_pos, gq_pos, gc_pos) = cosine_with_grad(qf, &pos);
    let mut loss = 0.0;
    let mut g_qf = vec![0.0; d];
    let mut g_pos = vec![0.0; d];
    let mut neg_grads: Vec<(usize, Vec<f64>)> = Vec::new();
    for (k, neg_ids) in negatives.iter().enumerate() {
        let neg = embed_sentence(neg_ids, cand_emb);
        let (sim_neg, gq_neg, gc_neg) = cosine_with_grad(qf, &neg);
        let h = margin - sim_pos + sim_neg;
        if h > 0.0 {
            loss += h;
            axpy(-1.0, &gq_pos, &mut g_qf);
            axpy(1.0, &gq_neg, &mut g_qf);
            axpy(-1.0, &gc_pos, &mut g_pos);
            neg_grads.push((k, gc_neg));
        }
    }

    let Some(grads) = grads else {
        return loss;
    };
    if loss == 0.0 {
        return loss;
    }

    // Back through the hops, last first.
    let mut g = g_qf;
    let mut g_mem = vec![vec![0.0; d]; memories.len()];
    for h in (0..weights.len()).rev() {
        let q = &qs[h];
        let s = &weights[h];
        let u: Vec<f64> = memories.iter().map(|p| dot(&g, p)).collect();
        let ubar: f64 = s.iter().zip(&u).map(|(a, b)| a * b).sum();
        let mut g_q = g.clone();
        for (i, p) in memories.iter().enumerate() {
            axpy(s[i], &g, &mut g_mem[i]);
            let dz = s[i] * (u[i] - ubar);
            if dz != 0.0 {
                let (_, gq_cos, gp_cos) = cosine_with_grad(q, p);
                axpy(dz, &gq_cos, &mut g_q);
                axpy(dz, &gp_cos, &mut g_mem[i]);
            }
        }
        g = g_q;
    }

    RowGrads::add(&mut grads.query, &ex.query, &g);
    for (ids, gm) in ex.profile.iter().zip(&g_mem) {
        RowGrads::add(&mut grads.query, ids, gm);
    }
    RowGrads::add(&mut grads.cand, &ex.positive, &g_pos);
    for (k, gn) in neg_grads {
        RowGrads::add(&mut grads.cand, &negatives[k], &gn);
    }
    loss
}

fn apply(emb: &mut EmbeddingMatrix, grads: &BTreeMap<usize, Vec<f64>>, lr: f64, l2: f64) {
    for (&i, g) in grads {
        let row = emb.row_mut(i);
        if l2 > 0.0 {
            for x in row.iter_mut() {
                *x -= lr * l2 * *x;
            }
        }
        axpy(-lr, g, row);
    }
}

/// One SGD update. Returns the example loss; rows untouched by an active
/// hinge are left exactly as they were.
pub fn sgd_step(
    model: &mut EmbeddingRanker,
    ex: &EncodedExample,
    negatives: &[Vec<usize>],
    cfg: &TrainConfig,
    lr: f64,
) -> f64 {
    let mut grads = RowGrads::default();
    let loss = example_loss_and_grad(
        &model.query_emb,
        model.candidate_matrix(),
        ex,
        negatives,
        cfg.margin,
        cfg.hops,
        Some(&mut grads),
    );
    if grads.is_empty() {
        return loss;
    }
    match model.cand_emb.as_mut() {
        Some(cand) => {
            apply(&mut model.query_emb, &grads.query, lr, cfg.l2);
            apply(cand, &grads.cand, lr, cfg.l2);
        }
        None => apply(&mut model.query_emb, &grads.combined(), lr, cfg.l2),
    }
    loss
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Draws `k` golds of other examples, skipping ones textually equal to the
/// example's own gold.
fn sample_negatives(
    i: usize,
    encoded: &[EncodedExample],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let n = encoded.len();
    let mut out = Vec::with_capacity(k);
    if n < 2 {
        return out;
    }
    let mut attempts = 0;
    while out.len() < k && attempts < 100 * k {
        attempts += 1;
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        if encoded[j].positive != encoded[i].positive {
            out.push(encoded[j].positive.clone());
        }
    }
    out
}

/// Seeded SGD over shuffled examples with `k` sampled negatives each.
pub fn train_ranker(
    examples: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    profile_attention: bool,
) -> Result<EmbeddingRanker, RankerError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(RankerError::EmptyExamples);
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let query_emb = EmbeddingMatrix::random(vocab.len(), cfg.dim, cfg.init_scale, &mut init_rng);
    let cand_emb = (!cfg.shared_embeddings)
        .then(|| EmbeddingMatrix::random(vocab.len(), cfg.dim, cfg.init_scale, &mut init_rng));
    let mut model = EmbeddingRanker {
        vocab: vocab.clone(),
        query_emb,
        cand_emb,
        profile_attention,
        hops: cfg.hops,
    };
    let encoded: Vec<EncodedExample> = examples
        .iter()
        .map(|e| EncodedExample::encode(e, vocab, profile_attention))
        .collect();

    for epoch in 0..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch as f64);
        let mut total = 0.0;
        for (step, &i) in order.iter().enumerate() {
            let negs = sample_negatives(i, &encoded, cfg.negatives, &mut rng);
            let loss = sgd_step(&mut model, &encoded[i], &negs, cfg, lr);
            if !loss.is_finite() {
                return Err(RankerError::NonFiniteLoss { epoch, step });
            }
            total += loss;
        }
        log::debug!("ranker epoch {epoch}: mean loss {:.5}", total / encoded.len() as f64);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rankers::Ranker;

    fn instance(seed: u64, with_profile: bool) -> (EmbeddingMatrix, EncodedExample, Vec<Vec<usize>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = EmbeddingMatrix::random(12, 5, 0.5, &mut rng);
        let mut ids = |n: usize| (0..n).map(|_| rng.random_range(0..12)).collect::<Vec<_>>();
        let ex = EncodedExample {
            query: ids(4),
            profile: if with_profile { vec![ids(3), ids(2), ids(3)] } else { vec![] },
            positive: ids(3),
        };
        let negs = vec![ids(3), ids(2), ids(4)];
        (w, ex, negs)
    }

    #[test]
    fn inactive_hinges_leave_weights_unchanged() {
        let (w, _, _) = instance(3, false);
        let ex = EncodedExample {
            query: vec![2, 3],
            profile: vec![],
            positive: vec![2, 3],
        };
        // Negative orthogonal-ish to the query; margin tiny.
        let mut model = EmbeddingRanker {
            vocab: Vocabulary::build(["a"], 1).unwrap(),
            query_emb: w.clone(),
            cand_emb: None,
            profile_attention: false,
            hops: 1,
        };
        let cfg = TrainConfig {
            margin: 1e-6,
            ..Default::default()
        };
        let neg = vec![vec![7]];
        let sim_neg = crate::numeric::cosine_raw(&embed_sentence(&[2, 3], &w), &embed_sentence(&[7], &w));
        assert!(sim_neg < 1.0 - 1e-3);
        let loss = sgd_step(&mut model, &ex, &neg, &cfg, 0.5);
        assert_eq!(loss, 0.0);
        assert_eq!(model.query_emb, w);
    }

    #[test]
    fn loss_without_grads_matches_with_grads() {
        let (w, ex, negs) = instance(11, true);
        let a = example_loss_and_grad(&w, &w, &ex, &negs, 0.5, 2, None);
        let mut g = RowGrads::default();
        let b = example_loss_and_grad(&w, &w, &ex, &negs, 0.5, 2, Some(&mut g));
        assert_eq!(a, b);
    }

    #[test]
    fn empty_profile_equals_plain() {
        let (w, mut ex, negs) = instance(5, false);
        let plain = example_loss_and_grad(&w, &w, &ex, &negs, 0.3, 1, None);
        ex.profile.clear();
        let attn = example_loss_and_grad(&w, &w, &ex, &negs, 0.3, 3, None);
        assert_eq!(plain, attn);
    }

    #[test]
    fn training_is_deterministic_and_rejects_empty() {
        let vocab = Vocabulary::build(["a b c", "d e f"], 1).unwrap();
        let ex = |g: &str| Example {
            episode_id: "e".into(),
            turn: 1,
            speaker: crate::corpus::Speaker::P1,
            context: vec!["a b".into()],
            profile: vec!["c".into()],
            gold: g.into(),
            candidates: vec![g.into()],
            gold_index: 0,
        };
        let exs = vec![ex("d"), ex("e f"), ex("a")];
        let cfg = TrainConfig {
            dim: 4,
            epochs: 3,
            negatives: 2,
            seed: 9,
            ..Default::default()
        };
        let m1 = train_ranker(&exs, &vocab, &cfg, true).unwrap();
        let m2 = train_ranker(&exs, &vocab, &cfg, true).unwrap();
        assert_eq!(m1.query_emb, m2.query_emb);
        assert!(matches!(train_ranker(&[], &vocab, &cfg, true), Err(RankerError::EmptyExamples)));
        let s = m1.score(&exs[0].context, &exs[0].profile, &["d".into(), "a".into()]);
        assert_eq!(s.len(), 2);
    }
}
