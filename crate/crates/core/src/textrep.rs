//! Tokenization, vocabulary construction and the sparse/dense vector helpers
//! shared by every model.
//!
//! Vocabulary indices are dense. Slot 0 is the unknown token and slot 1 the
//! end-of-sequence marker; every other token follows in descending corpus
//! frequency with a lexicographic tie-break, so a token's index doubles as
//! its 1-based frequency rank for the Zipf weights.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const UNK: usize = 0;
pub const EOS: usize = 1;
pub const UNK_TOKEN: &str = "__unk__";
pub const EOS_TOKEN: &str = "__eos__";

/// Bumped whenever `tokenize` changes; stored in every model file.
pub const TOKENIZER_VERSION: u32 = 1;

const PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"', '(', ')'];

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("min_freq must be at least 1")]
    InvalidMinFreq,
    #[error("vocabulary file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases, isolates the punctuation set `.,!?;:'"()` and splits on
/// whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        if PUNCTUATION.contains(&c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.extend(c.to_lowercase());
        }
    }
    spaced.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    df: Vec<u64>,
    n_docs: u64,
}

impl Vocabulary {
    /// Builds the vocabulary from a document collection. Tokens seen fewer
    /// than `min_freq` times are folded into the unknown slot.
    pub fn build<'a, I>(docs: I, min_freq: u64) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if min_freq == 0 {
            return Err(TextError::InvalidMinFreq);
        }
        let docs: Vec<Vec<String>> = docs.into_iter().map(tokenize).collect();
        if docs.is_empty() {
            return Err(TextError::EmptyCorpus);
        }

        let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
        for doc in &docs {
            for tok in doc {
                *freq.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|&(t, f)| f >= min_freq && t != UNK_TOKEN && t != EOS_TOKEN)
            .collect();
        // BTreeMap iteration is already lexicographic; the stable sort keeps
        // that order among equal counts.
        kept.sort_by(|a, b| b.1.cmp(&a.1));

        let mut tokens = vec![UNK_TOKEN.to_owned(), EOS_TOKEN.to_owned()];
        tokens.extend(kept.iter().map(|(t, _)| (*t).to_owned()));
        let index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();

        let mut df = vec![0u64; tokens.len()];
        for doc in &docs {
            let seen: HashSet<usize> = doc
                .iter()
                .map(|t| index.get(t.as_str()).copied().unwrap_or(UNK))
                .collect();
            for i in seen {
                df[i] += 1;
            }
        }

        Ok(Vocabulary {
            tokens,
            index,
            df,
            n_docs: docs.len() as u64,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    pub fn df(&self, index: usize) -> u64 {
        self.df[index]
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn lookup(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.get(t)).collect()
    }

    /// Tokenizes and indexes in one go.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.get(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.tokens.get(i).map_or(UNK_TOKEN, String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Stable 64-bit digest of the token list, stored in model headers so a
    /// model is never paired with the wrong vocabulary.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), TextError> {
        let mut buf = String::new();
        writeln!(
            buf,
            "#vocab v1 n_docs={} tokenizer=v{}",
            self.n_docs, TOKENIZER_VERSION
        )
        .unwrap();
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(buf, "{t}\t{i}\t{}", self.df[i]).unwrap();
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self, TextError> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.ok_or(TextError::Format {
            line: 1,
            msg: "missing header".into(),
        })?;
        let n_docs = parse_header(&header)?;

        let mut tokens = Vec::new();
        let mut df = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let bad = |msg: &str| TextError::Format {
                line: lineno,
                msg: msg.to_owned(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad("expected token, rank and df"));
            }
            let rank: usize = fields[1].parse().map_err(|_| bad("bad rank"))?;
            if rank != tokens.len() {
                return Err(bad("ranks must be dense and ordered"));
            }
            let d: u64 = fields[2].parse().map_err(|_| bad("bad df"))?;
            if d > n_docs {
                return Err(bad("df exceeds n_docs"));
            }
            tokens.push(fields[0].to_owned());
            df.push(d);
        }
        if tokens.len() < 2 || tokens[UNK] != UNK_TOKEN || tokens[EOS] != EOS_TOKEN {
            return Err(TextError::Format {
                line: 2,
                msg: "reserved unknown/end-of-sequence slots missing".into(),
            });
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary {
            tokens,
            index,
            df,
            n_docs,
        })
    }
}

fn parse_header(header: &str) -> Result<u64, TextError> {
    let bad = |msg: &str| TextError::Format {
        line: 1,
        msg: msg.to_owned(),
    };
    let mut parts = header.split_whitespace();
    if parts.next() != Some("#vocab") || parts.next() != Some("v1") {
        return Err(bad("expected `#vocab v1` header"));
    }
    let mut n_docs = None;
    for part in parts {
        if let Some(v) = part.strip_prefix("n_docs=") {
            n_docs = Some(v.parse().map_err(|_| bad("bad n_docs"))?);
        } else if let Some(v) = part.strip_prefix("tokenizer=") {
            if v != format!("v{TOKENIZER_VERSION}") {
                return Err(bad("unsupported tokenizer version"));
            }
        }
    }
    n_docs.ok_or_else(|| bad("missing n_docs"))
}

/// Smoothed inverse document frequency, `ln((1 + n) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable(Vec<f64>);

impl IdfTable {
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        let n = vocab.n_docs() as f64;
        IdfTable(
            (0..vocab.len())
                .map(|i| ((1.0 + n) / (1.0 + vocab.df(i) as f64)).ln() + 1.0)
                .collect(),
        )
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Rank-based term frequency estimate used to down-weight common words.
pub fn zipf_tf(rank: usize) -> f64 {
    1e6 * (rank as f64).powf(-1.07)
}

/// `1 / (1 + ln(1 + tf))`.
pub fn inverse_tf_weight(tf: f64) -> f64 {
    1.0 / (1.0 + tf.ln_1p())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZipfWeights {
    tf: Vec<f64>,
    alpha: Vec<f64>,
}

impl ZipfWeights {
    /// Index `i >= 1` has rank `i`. The unknown slot is treated as the
    /// rarest entry, one past the end of the vocabulary.
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        let n = vocab.len();
        let tf: Vec<f64> = (0..n)
            .map(|i| zipf_tf(if i == UNK { n } else { i }))
            .collect();
        let alpha = tf.iter().map(|&t| inverse_tf_weight(t)).collect();
        ZipfWeights { tf, alpha }
    }

    pub fn tf(&self, index: usize) -> f64 {
        self.tf[index]
    }

    pub fn alpha(&self, index: usize) -> f64 {
        self.alpha[index]
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Vocabulary plus the two weight tables derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub vocab: Vocabulary,
    pub idf: IdfTable,
    pub zipf: ZipfWeights,
}

impl Dictionary {
    pub fn build<'a, I>(docs: I, min_freq: u64) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        Ok(Self::from_vocab(Vocabulary::build(docs, min_freq)?))
    }

    pub fn from_vocab(vocab: Vocabulary) -> Self {
        let idf = IdfTable::from_vocab(&vocab);
        let zipf = ZipfWeights::from_vocab(&vocab);
        Dictionary { vocab, idf, zipf }
    }

    /// tf-idf weighted bag of words for a piece of text.
    pub fn tfidf_text(&self, text: &str) -> SparseVector {
        tfidf(&bow(&self.vocab.encode(text)), &self.idf)
    }
}

/// Sorted `(index, weight)` pairs with no stored zeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    /// Sorts, merges duplicate indices and drops zero weights.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (i, w) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += w,
                _ => entries.push((i, w)),
            }
        }
        entries.retain(|e| e.1 != 0.0);
        SparseVector { entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        let mut acc = 0.0;
        while let (Some(&&(i, x)), Some(&&(j, y))) = (a.peek(), b.peek()) {
            match i.cmp(&j) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    acc += x * y;
                    a.next();
                    b.next();
                }
            }
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt()
    }

    /// Adds `other` into `self`.
    pub fn add(&self, other: &SparseVector) -> SparseVector {
        let mut pairs = self.entries.clone();
        pairs.extend_from_slice(&other.entries);
        SparseVector::from_pairs(pairs)
    }
}

/// Occurrence counts per vocabulary index.
pub fn bow(ids: &[usize]) -> SparseVector {
    SparseVector::from_pairs(ids.iter().map(|&i| (i, 1.0)).collect())
}

pub fn tfidf(v: &SparseVector, idf: &IdfTable) -> SparseVector {
    SparseVector::from_pairs(v.entries.iter().map(|&(i, c)| (i, c * idf.get(i))).collect())
}

/// Cosine similarity of two sparse vectors; zero when either has zero norm.
pub fn cosine_sparse(u: &SparseVector, v: &SparseVector) -> f64 {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    clamp_unit(u.dot(v) / (nu * nv))
}

/// Cosine similarity of two dense vectors; zero when either has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    clamp_unit(dot / (nu.sqrt() * nv.sqrt()))
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(
            tokenize("Hi! How are you?"),
            toks(&["hi", "!", "how", "are", "you", "?"])
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("I'm OK."), toks(&["i", "'", "m", "ok", "."]));
        assert_eq!(tokenize("  (a)\t\"b\" "), toks(&["(", "a", ")", "\"", "b", "\""]));
    }

    #[test]
    fn zipf_tf_values() {
        assert_eq!(zipf_tf(1), 1_000_000.0);
        // 1e6 * 100^-1.07 evaluated with mpmath at 30 digits.
        assert!((zipf_tf(100) - 7244.359_600_749_9).abs() < 1e-6);
        assert_eq!(inverse_tf_weight(0.0), 1.0);
        assert!((inverse_tf_weight(zipf_tf(2)) - 0.071_053_787_193_385_56).abs() < 1e-12);
    }

    #[test]
    fn vocab_rank_order_and_reserved_slots() {
        let v = Vocabulary::build(["b a a", "c b a", "z"], 1).unwrap();
        assert_eq!(v.token(UNK), UNK_TOKEN);
        assert_eq!(v.token(EOS), EOS_TOKEN);
        // a:3, b:2, c:1, z:1 (lexicographic among ties)
        assert_eq!(v.token(2), "a");
        assert_eq!(v.token(3), "b");
        assert_eq!(v.token(4), "c");
        assert_eq!(v.token(5), "z");
        assert_eq!(v.df(v.get("a")), 2);
        assert_eq!(v.n_docs(), 3);
        assert_eq!(v.get("nope"), UNK);
    }

    #[test]
    fn min_freq_folds_into_unknown() {
        let v = Vocabulary::build(["a a b", "a c"], 2).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.get("b"), UNK);
        assert_eq!(v.df(UNK), 2);
    }

    #[test]
    fn empty_corpus_rejected() {
        let none: [&str; 0] = [];
        assert!(matches!(Vocabulary::build(none, 1), Err(TextError::EmptyCorpus)));
        assert!(matches!(Vocabulary::build(["a"], 0), Err(TextError::InvalidMinFreq)));
    }

    #[test]
    fn idf_of_ubiquitous_token_is_one() {
        let d = Dictionary::build(["x y", "x", "x z"], 1).unwrap();
        assert!((d.idf.get(d.vocab.get("x")) - 1.0).abs() < 1e-15);
        assert!(d.idf.as_slice().iter().all(|w| w.is_finite() && *w >= 0.0));
    }

    #[test]
    fn bow_and_tfidf() {
        let v = bow(&[3, 3, 7]);
        assert_eq!(v.entries(), &[(3, 2.0), (7, 1.0)]);
        assert!(bow(&[]).is_empty());

        let mut idf = vec![1.0; 8];
        idf[3] = 1.5;
        let t = tfidf(&SparseVector::from_pairs(vec![(3, 2.0)]), &IdfTable(idf));
        assert_eq!(t.entries(), &[(3, 3.0)]);
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        let a = SparseVector::from_pairs(vec![(1, 1.0), (4, 2.0)]);
        let b = SparseVector::from_pairs(vec![(2, 5.0)]);
        assert_eq!(cosine_sparse(&a, &b), 0.0);
        assert!((cosine_sparse(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocabulary::build(["the cat sat", "the dog"], 1).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#vocab v1 n_docs=2 tokenizer=v1\n"));
        let back = Vocabulary::read_from(&buf[..]).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
    }

    #[test]
    fn vocab_file_rejects_bad_rank() {
        let bad = "#vocab v1 n_docs=1 tokenizer=v1\n__unk__\t0\t0\n__eos__\t2\t0\n";
        assert!(matches!(
            Vocabulary::read_from(bad.as_bytes()),
            Err(TextError::Format { line: 3, .. })
        ));
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            u in prop::collection::vec(-10.0f64..10.0, 4),
            v in prop::collection::vec(-10.0f64..10.0, 4),
            a in 0.01f64..100.0,
        ) {
            let c = cosine(&u, &v);
            prop_assert!((c - cosine(&v, &u)).abs() <= 1e-12);
            let scaled: Vec<f64> = u.iter().map(|x| x * a).collect();
            prop_assert!((c - cosine(&scaled, &v)).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&c));
        }

        #[test]
        fn zipf_monotone(i in 1usize..50_000, gap in 1usize..1000) {
            let (t1, t2) = (zipf_tf(i), zipf_tf(i + gap));
            prop_assert!(t1 > t2);
            prop_assert!(inverse_tf_weight(t1) < inverse_tf_weight(t2));
        }

        #[test]
        fn vocab_build_deterministic(words in prop::collection::vec("[a-e]{1,2}", 1..30)) {
            let doc = words.join(" ");
            let a = Vocabulary::build([doc.as_str(), "a b"], 1).unwrap();
            let b = Vocabulary::build([doc.as_str(), "a b"], 1).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
