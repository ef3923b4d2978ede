use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::numeric::{axpy, cosine_raw, softmax};
use crate::textrep::Vocabulary;

use super::Ranker;

/// `rows × dim` word-embedding table, one row per vocabulary index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * dim, "embedding data has the wrong length");
        EmbeddingMatrix { rows, dim, data }
    }

    /// Gaussian init with standard deviation `scale`.
    pub fn random(rows: usize, dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, scale).expect("scale is positive");
        let data = (0..rows * dim).map(|_| normal.sample(rng)).collect();
        EmbeddingMatrix { rows, dim, data }
    }

    pub fn seeded(rows: usize, dim: usize, scale: f64, seed: u64) -> Self {
        Self::random(rows, dim, scale, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Sum of the embedding rows of `ids`, repeats included.
pub fn embed_sentence(ids: &[usize], w: &EmbeddingMatrix) -> Vec<f64> {
    let mut out = vec![0.0; w.dim()];
    for &i in ids {
        axpy(1.0, w.row(i), &mut out);
    }
    out
}

/// Residual attention over profile sentence embeddings:
/// `q + Σ softmax(cos(q, p_i)) p_i`, repeated for `hops` rounds with the
/// output fed back as the next query. An empty profile returns `q`.
pub fn profile_attend(q: &[f64], profile: &[Vec<f64>], hops: usize) -> Vec<f64> {
    let mut q = q.to_vec();
    if profile.is_empty() {
        return q;
    }
    for _ in 0..hops {
        let sims: Vec<f64> = profile.iter().map(|p| cosine_raw(&q, p)).collect();
        let weights = softmax(&sims);
        let mut next = q.clone();
        for (s, p) in weights.iter().zip(profile) {
            axpy(*s, p, &mut next);
        }
        q = next;
    }
    q
}

/// Bag-of-embeddings ranker trained with a margin ranking loss. With
/// `profile_attention` off, profile sentences are appended to the query
/// tokens; with it on, they are attended over as a memory.
#[derive(Debug, Clone)]
pub struct EmbeddingRanker {
    pub vocab: Vocabulary,
    pub query_emb: EmbeddingMatrix,
    /// Candidate-side table when embeddings are not shared.
    pub cand_emb: Option<EmbeddingMatrix>,
    pub profile_attention: bool,
    pub hops: usize,
}

impl EmbeddingRanker {
    pub fn candidate_matrix(&self) -> &EmbeddingMatrix {
        self.cand_emb.as_ref().unwrap_or(&self.query_emb)
    }

    fn ids(&self, texts: &[String]) -> Vec<usize> {
        texts.iter().flat_map(|t| self.vocab.encode(t)).collect()
    }

    /// Query encoding `q`, or `q⁺` when the model attends over the profile.
    pub fn encode_query(&self, context: &[String], profile: &[String]) -> Vec<f64> {
        if self.profile_attention {
            let q = embed_sentence(&self.ids(context), &self.query_emb);
            let memories: Vec<Vec<f64>> = profile
                .iter()
                .map(|p| embed_sentence(&self.vocab.encode(p), &self.query_emb))
                .collect();
            profile_attend(&q, &memories, self.hops)
        } else {
            let mut ids = self.ids(context);
            ids.extend(self.ids(profile));
            embed_sentence(&ids, &self.query_emb)
        }
    }

    pub fn encode_candidate(&self, text: &str) -> Vec<f64> {
        embed_sentence(&self.vocab.encode(text), self.candidate_matrix())
    }
}

impl Ranker for EmbeddingRanker {
    fn score(&self, context: &[String], profile: &[String], candidates: &[String]) -> Vec<f64> {
        let q = self.encode_query(context, profile);
        candidates
            .iter()
            .map(|c| cosine_raw(&q, &self.encode_candidate(c)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_sentence_sums_rows() {
        let w = EmbeddingMatrix::from_vec(3, 2, vec![0.0, 0.0, 1.0, 2.0, -3.0, 0.5]);
        assert_eq!(embed_sentence(&[1], &w), vec![1.0, 2.0]);
        assert_eq!(embed_sentence(&[1, 1], &w), vec![2.0, 4.0]);
        assert_eq!(embed_sentence(&[], &w), vec![0.0, 0.0]);
        assert_eq!(embed_sentence(&[1, 2], &w), vec![-2.0, 2.5]);
    }

    #[test]
    fn attend_single_sentence() {
        let q = [1.0, 0.0];
        let p = vec![vec![0.5, 2.0]];
        assert_eq!(profile_attend(&q, &p, 1), vec![1.5, 2.0]);
        assert_eq!(profile_attend(&q, &[], 3), q.to_vec());
    }

    #[test]
    fn attend_equal_similarity_averages() {
        let q = [1.0, 0.0];
        // Both at 45 degrees from q.
        let p = vec![vec![1.0, 1.0], vec![2.0, -2.0]];
        let out = profile_attend(&q, &p, 1);
        assert!((out[0] - (1.0 + 1.5)).abs() < 1e-12);
        assert!((out[1] - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn attend_three_sentences_pencil() {
        let q = [1.0, 2.0];
        let p = vec![vec![3.0, 0.0], vec![0.0, -1.0], vec![1.0, 1.0]];
        // cos(q,p1) = 1/sqrt5, cos(q,p2) = -2/sqrt5, cos(q,p3) = 3/sqrt10
        let z = [1.0 / 5f64.sqrt(), -2.0 / 5f64.sqrt(), 3.0 / 10f64.sqrt()];
        let e: Vec<f64> = z.iter().map(|x| x.exp()).collect();
        let total: f64 = e.iter().sum();
        let s: Vec<f64> = e.iter().map(|x| x / total).collect();
        let expect = [
            1.0 + s[0] * 3.0 + s[2] * 1.0,
            2.0 - s[1] * 1.0 + s[2] * 1.0,
        ];
        let out = profile_attend(&q, &p, 1);
        assert!((out[0] - expect[0]).abs() < 1e-9);
        assert!((out[1] - expect[1]).abs() < 1e-9);
    }

    #[test]
    fn two_hops_feed_back() {
        let q = [1.0, 0.0];
        let p = vec![vec![0.0, 1.0], vec![1.0, 1.0]];
        let once = profile_attend(&q, &p, 1);
        let twice = profile_attend(&once, &p, 1);
        assert_eq!(profile_attend(&q, &p, 2), twice);
    }
}
