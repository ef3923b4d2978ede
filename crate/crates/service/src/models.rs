//! Model files on disk and the reply policy used in live chat.
//!
//! Every model type is a main file plus side files named after it:
//! `<path>.vocab` holds the vocabulary for trained models and `<path>.kv`
//! the key-value store. The tf-idf baseline has no weights, so its main
//! file is the vocabulary itself.

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use personachat::eval::Evaluable;
use personachat::generative::{read_gen_model, GenError, GenMode};
use personachat::rankers::{read_kv_store, read_ranker, IrRanker, KvRanker, RankResult, RankerError};
use personachat::textrep::{Dictionary, TextError, Vocabulary};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelType {
    Ir,
    Ranker,
    ProfileMem,
    KvProfileMem,
    Seq2seq,
    Lm,
    GenProfileMem,
}

impl ModelType {
    pub const ALL: [ModelType; 7] = [
        ModelType::Ir,
        ModelType::Ranker,
        ModelType::ProfileMem,
        ModelType::KvProfileMem,
        ModelType::Seq2seq,
        ModelType::Lm,
        ModelType::GenProfileMem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelType::Ir => "ir",
            ModelType::Ranker => "ranker",
            ModelType::ProfileMem => "profile-mem",
            ModelType::KvProfileMem => "kv-profile-mem",
            ModelType::Seq2seq => "seq2seq",
            ModelType::Lm => "lm",
            ModelType::GenProfileMem => "gen-profile-mem",
        }
    }

    pub fn gen_mode(self) -> Option<GenMode> {
        match self {
            ModelType::Seq2seq => Some(GenMode::Seq2Seq),
            ModelType::Lm => Some(GenMode::Lm),
            ModelType::GenProfileMem => Some(GenMode::ProfileMemory),
            _ => None,
        }
    }

    pub fn is_generative(self) -> bool {
        self.gen_mode().is_some()
    }
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ModelType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown model type {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Vocab { path: PathBuf, source: TextError },
    #[error("{path}: {source}")]
    Ranker { path: PathBuf, source: RankerError },
    #[error("{path}: {source}")]
    Generative { path: PathBuf, source: GenError },
    #[error("{path}: {msg}")]
    Mismatch { path: PathBuf, msg: String },
}

/// `<path>.<ext>`, keeping any extension `path` already has.
pub fn side_path(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn open(path: &Path) -> Result<BufReader<File>, ModelError> {
    File::open(path).map(BufReader::new).map_err(|source| ModelError::Io {
        path: path.to_owned(),
        source,
    })
}

fn read_vocab(path: &Path) -> Result<Vocabulary, ModelError> {
    Vocabulary::read_from(open(path)?).map_err(|source| ModelError::Vocab {
        path: path.to_owned(),
        source,
    })
}

/// Loads a model file written by `personachat train`.
pub fn load_model(path: &Path, kind: ModelType) -> Result<Evaluable, ModelError> {
    let ranker_err = |source| ModelError::Ranker {
        path: path.to_owned(),
        source,
    };
    let mismatch = |msg: String| ModelError::Mismatch {
        path: path.to_owned(),
        msg,
    };
    if kind == ModelType::Ir {
        return Ok(Evaluable::Ranker(Arc::new(IrRanker::new(Dictionary::from_vocab(read_vocab(path)?)))));
    }
    let vocab = read_vocab(&side_path(path, "vocab"))?;
    if let Some(mode) = kind.gen_mode() {
        let model = read_gen_model(open(path)?, vocab).map_err(|source| ModelError::Generative {
            path: path.to_owned(),
            source,
        })?;
        if model.mode != mode {
            return Err(mismatch(format!("file holds a {} model, not {kind}", model.mode)));
        }
        return Ok(Evaluable::Generative(Arc::new(model)));
    }
    let model = read_ranker(open(path)?, vocab).map_err(ranker_err)?;
    let wants_attention = kind != ModelType::Ranker;
    if model.profile_attention != wants_attention {
        let held = if model.profile_attention { "profile-mem" } else { "ranker" };
        return Err(mismatch(format!("file holds a {held} model, not {kind}")));
    }
    if kind == ModelType::KvProfileMem {
        let kv = side_path(path, "kv");
        let store = read_kv_store(open(&kv)?).map_err(|source| ModelError::Ranker { path: kv, source })?;
        return Ok(Evaluable::Ranker(Arc::new(KvRanker { model, store })));
    }
    Ok(Evaluable::Ranker(Arc::new(model)))
}

/// Next chat reply: the top-ranked pool utterance for ranking models,
/// greedy decoding for generative ones. `None` when a ranking model has
/// nothing to choose from.
pub fn reply(model: &Evaluable, context: &[String], profile: &[String], pool: &[String]) -> Option<String> {
    match model {
        Evaluable::Ranker(r) => {
            let top = RankResult::from_scores(&r.score(context, profile, pool)).top()?;
            Some(pool[top].clone())
        }
        Evaluable::Generative(g) => Some(g.reply(context, profile)),
    }
}
