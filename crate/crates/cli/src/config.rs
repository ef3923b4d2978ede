//! `--config` file: JSON holding defaults for any flag plus per-module
//! sections. Command-line flags win over the file.

use std::path::{Path, PathBuf};

use personachat::corpus::{ConditioningMode, Split, SynthConfig, Variant};
use personachat::eval::{EvalConfig, ProfilePredConfig};
use personachat::generative::GenConfig;
use personachat::rankers::TrainConfig;
use personachat_service::ModelType;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    pub fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(rename = "in")]
    pub input: Option<OneOrMany<PathBuf>>,
    pub out: Option<PathBuf>,
    pub model: Option<OneOrMany<String>>,
    pub model_type: Option<ModelType>,
    pub mode: Option<ConditioningMode>,
    pub variant: Option<Variant>,
    pub split: Option<Split>,
    pub seed: Option<u64>,
    pub n_candidates: Option<usize>,
    pub port: Option<u16>,
    pub synth: Option<SynthConfig>,
    pub ranker: Option<TrainConfig>,
    pub generative: Option<GenConfig>,
    /// Keys the key-value memory attends over; absent means the default.
    pub kv_top_m: Option<usize>,
    pub eval: Option<EvalConfig>,
    pub profile_pred: Option<ProfilePredConfig>,
    /// Service configuration for `serve`, in the service's own format.
    pub service: Option<serde_json::Value>,
    /// Directory relative paths in this file resolve against.
    #[serde(skip)]
    pub base: PathBuf,
}

impl FileConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let mut cfg: FileConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.base = base.to_owned();
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("."))).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn resolve(&self, p: PathBuf) -> PathBuf {
        if p.is_relative() {
            self.base.join(p)
        } else {
            p
        }
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        self.input
            .clone()
            .map(OneOrMany::into_vec)
            .unwrap_or_default()
            .into_iter()
            .map(|p| self.resolve(p))
            .collect()
    }

    pub fn out_path(&self) -> Option<PathBuf> {
        self.out.clone().map(|p| self.resolve(p))
    }

    pub fn models(&self) -> Vec<String> {
        self.model.clone().map(OneOrMany::into_vec).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_partial_and_keys_strict() {
        let cfg = FileConfig::parse(
            r#"{"in":"c.jsonl","seed":4,"ranker":{"epochs":3},"synth":{"n_personas":5}}"#,
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(cfg.inputs(), vec![PathBuf::from("/cfg/c.jsonl")]);
        assert_eq!(cfg.ranker.as_ref().unwrap().epochs, 3);
        assert_eq!(cfg.ranker.unwrap().dim, TrainConfig::default().dim);
        assert_eq!(cfg.synth.unwrap().n_personas, 5);
        assert!(FileConfig::parse(r#"{"sed":4}"#, Path::new(".")).is_err());
        assert!(FileConfig::parse(r#"{"ranker":{"epoch":4}}"#, Path::new(".")).is_err());
        let many = FileConfig::parse(r#"{"model":["a","b"],"in":["x","/y"]}"#, Path::new("d")).unwrap();
        assert_eq!(many.models(), ["a", "b"]);
        assert_eq!(many.inputs(), vec![PathBuf::from("d/x"), PathBuf::from("/y")]);
    }
}
