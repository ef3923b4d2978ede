use crate::corpus::Example;
use crate::numeric::{axpy, cosine_raw, softmax};

use super::embedding::{embed_sentence, EmbeddingRanker};
use super::{Ranker, RankerError};

pub const DEFAULT_TOP_M: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct KvPair {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub text: String,
}

/// Training dialogue histories (keys) and the replies that followed them
/// (values), encoded with a trained profile-memory model's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct KvStore {
    pub pairs: Vec<KvPair>,
    /// Attention is restricted to the `top_m` most similar keys; `None`
    /// attends over the whole store.
    pub top_m: Option<usize>,
    /// Add the attended values to `q⁺` (residual) or replace it.
    pub residual: bool,
}

impl KvStore {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.key.len())
    }
}

/// Keys embed the flattened history with the query table, values embed the
/// reply with the candidate table. Examples without history are skipped:
/// their key would be the zero vector.
pub fn kv_build(
    examples: &[Example],
    model: &EmbeddingRanker,
    top_m: Option<usize>,
) -> Result<KvStore, RankerError> {
    let pairs: Vec<KvPair> = examples
        .iter()
        .filter(|e| !e.context.is_empty())
        .map(|e| {
            let ids: Vec<usize> = e.context.iter().flat_map(|s| model.vocab.encode(s)).collect();
            KvPair {
                key: embed_sentence(&ids, &model.query_emb),
                value: model.encode_candidate(&e.gold),
                text: e.gold.clone(),
            }
        })
        .collect();
    if pairs.is_empty() {
        return Err(RankerError::EmptyStore);
    }
    Ok(KvStore {
        pairs,
        top_m,
        residual: true,
    })
}

/// Second hop: softmax over `cos(q⁺, key)` for the selected keys, then
/// `q⁺⁺ = q⁺ + Σ s_j v_j` (or just the sum when not residual).
pub fn kv_attend(q_plus: &[f64], store: &KvStore) -> Result<Vec<f64>, RankerError> {
    if store.is_empty() {
        return Err(RankerError::EmptyStore);
    }
    let sims: Vec<f64> = store.pairs.iter().map(|p| cosine_raw(q_plus, &p.key)).collect();
    let mut selected: Vec<usize> = (0..sims.len()).collect();
    if let Some(m) = store.top_m {
        if m < selected.len() {
            selected.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
            selected.truncate(m.max(1));
            // Sum in store order so the full-size selection matches the
            // untruncated path bit for bit.
            selected.sort_unstable();
        }
    }
    let weights = softmax(&selected.iter().map(|&j| sims[j]).collect::<Vec<_>>());
    let mut out = if store.residual {
        q_plus.to_vec()
    } else {
        vec![0.0; q_plus.len()]
    };
    for (s, &j) in weights.iter().zip(&selected) {
        axpy(*s, &store.pairs[j].value, &mut out);
    }
    Ok(out)
}

/// Profile memory first hop, key-value memory second hop.
#[derive(Debug, Clone)]
pub struct KvRanker {
    pub model: EmbeddingRanker,
    pub store: KvStore,
}

impl Ranker for KvRanker {
    fn score(&self, context: &[String], profile: &[String], candidates: &[String]) -> Vec<f64> {
        let q_plus = self.model.encode_query(context, profile);
        let q = kv_attend(&q_plus, &self.store).expect("store is non-empty by construction");
        candidates
            .iter()
            .map(|c| cosine_raw(&q, &self.model.encode_candidate(c)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(key: [f64; 2], value: [f64; 2]) -> KvPair {
        KvPair {
            key: key.to_vec(),
            value: value.to_vec(),
            text: String::new(),
        }
    }

    fn store(top_m: Option<usize>) -> KvStore {
        KvStore {
            pairs: vec![
                pair([1.0, 0.0], [0.5, 0.5]),
                pair([0.0, 1.0], [-1.0, 2.0]),
                pair([1.0, 1.0], [3.0, 0.0]),
                pair([-1.0, 0.5], [0.0, -1.0]),
                pair([2.0, -1.0], [1.0, 1.0]),
            ],
            top_m,
            residual: true,
        }
    }

    #[test]
    fn singleton_store_adds_value() {
        let s = KvStore {
            pairs: vec![pair([1.0, 2.0], [0.25, -1.0])],
            top_m: None,
            residual: true,
        };
        assert_eq!(kv_attend(&[1.0, 1.0], &s).unwrap(), vec![1.25, 0.0]);
    }

    #[test]
    fn full_top_m_equals_untruncated() {
        let q = [0.3, 0.9];
        let full = kv_attend(&q, &store(None)).unwrap();
        assert_eq!(kv_attend(&q, &store(Some(5))).unwrap(), full);
        assert_eq!(kv_attend(&q, &store(Some(500))).unwrap(), full);
    }

    #[test]
    fn top_two_pencil() {
        let q = [1.0, 0.0];
        // cos with keys: 1, 0, 1/sqrt2, -2/sqrt5, 2/sqrt5 -> top 2 are keys 0 and 4.
        let z0 = 1.0f64;
        let z4 = 2.0 / 5f64.sqrt();
        let (e0, e4) = (z0.exp(), z4.exp());
        let (s0, s4) = (e0 / (e0 + e4), e4 / (e0 + e4));
        let expect = [1.0 + s0 * 0.5 + s4 * 1.0, s0 * 0.5 + s4 * 1.0];
        let out = kv_attend(&q, &store(Some(2))).unwrap();
        assert!((out[0] - expect[0]).abs() < 1e-9);
        assert!((out[1] - expect[1]).abs() < 1e-9);
    }

    #[test]
    fn non_residual_drops_query() {
        let mut s = store(Some(1));
        s.residual = false;
        // Top key for q=[1,0] is key 0 -> value [0.5, 0.5] with weight 1.
        assert_eq!(kv_attend(&[1.0, 0.0], &s).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn empty_store_errors() {
        let s = KvStore {
            pairs: vec![],
            top_m: None,
            residual: true,
        };
        assert!(matches!(kv_attend(&[1.0], &s), Err(RankerError::EmptyStore)));
    }
}
