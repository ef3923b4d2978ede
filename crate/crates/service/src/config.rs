//! Service configuration file (JSON).
//!
//! ```json
//! {
//!   "event_log": "events.jsonl",
//!   "corpus": "corpus.jsonl",
//!   "models": {
//!     "pm": { "path": "models/pm.bin", "type": "profile-mem", "mode": "self" }
//!   }
//! }
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use personachat::corpus::{ConditioningMode, Variant};
use serde::Deserialize;

use crate::models::ModelType;

pub const DEFAULT_QUIZ_MIN_TURNS: usize = 6;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub path: PathBuf,
    #[serde(rename = "type")]
    pub kind: ModelType,
    /// `none` ignores the session persona; `self` conditions on it.
    #[serde(default = "own_mode")]
    pub mode: ConditioningMode,
}

fn own_mode() -> ConditioningMode {
    ConditioningMode::Own
}

fn original() -> Variant {
    Variant::Original
}

fn default_min_turns() -> usize {
    DEFAULT_QUIZ_MIN_TURNS
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub event_log: PathBuf,
    /// Canonical JSONL corpus; its test split supplies session personas and
    /// its training split the default reply pool.
    pub corpus: PathBuf,
    #[serde(default = "original")]
    pub variant: Variant,
    /// Optional reply pool for ranking models, one utterance per line.
    #[serde(default)]
    pub reply_pool: Option<PathBuf>,
    #[serde(default = "default_min_turns")]
    pub quiz_min_turns: usize,
    /// Built browser client served at `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    pub models: BTreeMap<String, ModelEntry>,
}

impl ServiceConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self, String> {
        let mut cfg: ServiceConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.event_log);
        resolve(&mut cfg.corpus);
        cfg.reply_pool.iter_mut().for_each(resolve);
        cfg.static_dir.iter_mut().for_each(resolve);
        cfg.models.values_mut().for_each(|m| resolve(&mut m.path));
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = ServiceConfig::from_json(
            r#"{"event_log":"ev.jsonl","corpus":"/data/c.jsonl",
                "models":{"a":{"path":"m.bin","type":"seq2seq"}}}"#,
            Path::new("/srv"),
        )
        .unwrap();
        assert_eq!(cfg.event_log, PathBuf::from("/srv/ev.jsonl"));
        assert_eq!(cfg.corpus, PathBuf::from("/data/c.jsonl"));
        assert_eq!(cfg.quiz_min_turns, 6);
        assert_eq!(cfg.variant, Variant::Original);
        assert_eq!(cfg.models["a"].kind, ModelType::Seq2seq);
        assert_eq!(cfg.models["a"].mode, ConditioningMode::Own);
        assert_eq!(cfg.models["a"].path, PathBuf::from("/srv/m.bin"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ServiceConfig::from_json(r#"{"event_log":"e","corpus":"c","models":{},"port":1}"#, Path::new("."));
        assert!(err.unwrap_err().contains("port"));
    }
}
