use crate::textrep::{bow, cosine_sparse, tfidf, Dictionary, SparseVector};

use super::Ranker;

/// tf-idf weighted cosine between the query (history plus any profile
/// sentences) and each candidate.
#[derive(Debug, Clone)]
pub struct IrRanker {
    pub dict: Dictionary,
}

impl IrRanker {
    pub fn new(dict: Dictionary) -> Self {
        IrRanker { dict }
    }

    pub fn query_vector(&self, context: &[String], profile: &[String]) -> SparseVector {
        let ids: Vec<usize> = context
            .iter()
            .chain(profile)
            .flat_map(|s| self.dict.vocab.encode(s))
            .collect();
        tfidf(&bow(&ids), &self.dict.idf)
    }
}

impl Ranker for IrRanker {
    fn score(&self, context: &[String], profile: &[String], candidates: &[String]) -> Vec<f64> {
        let q = self.query_vector(context, profile);
        candidates
            .iter()
            .map(|c| cosine_sparse(&q, &self.dict.tfidf_text(c)))
            .collect()
    }
}
