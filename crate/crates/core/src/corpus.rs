//! PersonaChat-style corpora: ingestion of the released line format, the
//! canonical JSONL store, a seeded synthetic generator, and materialization
//! of next-utterance examples under a persona conditioning mode.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textrep::tokenize;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_CANDIDATES: usize = 20;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("record {record}: schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    SchemaVersion { record: usize, found: u32 },
    #[error("record {record}: {msg}")]
    Load { record: usize, msg: String },
    #[error("episode {episode}: {msg}")]
    Invalid { episode: String, msg: String },
    #[error("no episodes carry {0} personas")]
    VariantMissing(Variant),
    #[error("episode {episode} has no persona for {speaker}")]
    PersonaMissing { episode: String, speaker: Speaker },
    #[error("synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {} `{other}`", stringify!($name))),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Original,
    Revised,
}
text_enum!(Variant { Original => "original", Revised => "revised" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    P0,
    P1,
}
text_enum!(Speaker { P0 => "p0", P1 => "p1" });

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::P0 => Speaker::P1,
            Speaker::P1 => Speaker::P0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}
text_enum!(Split { Train => "train", Valid => "valid", Test => "test" });

/// Which persona(s) a model sees when predicting the next utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditioningMode {
    None,
    #[serde(rename = "self")]
    Own,
    Their,
    Both,
}
text_enum!(ConditioningMode { None => "none", Own => "self", Their => "their", Both => "both" });

impl ConditioningMode {
    pub const ALL: [ConditioningMode; 4] = [
        ConditioningMode::None,
        ConditioningMode::Own,
        ConditioningMode::Their,
        ConditioningMode::Both,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub variant: Variant,
    pub sentences: Vec<String>,
}

impl Persona {
    pub fn validate(&self) -> Result<(), String> {
        if self.sentences.is_empty() {
            return Err(format!("persona {} has no sentences", self.id));
        }
        if let Some(s) = self.sentences.iter().find(|s| tokenize(s).is_empty()) {
            return Err(format!("persona {} has an empty sentence {s:?}", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub candidates: Option<Vec<String>>,
    pub gold_index: Option<usize>,
}

impl Turn {
    pub fn plain(speaker: Speaker, text: impl Into<String>) -> Self {
        Turn {
            speaker,
            text: text.into(),
            candidates: None,
            gold_index: None,
        }
    }

    pub fn is_labeled(&self) -> bool {
        self.candidates.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub id: String,
    pub split: Split,
    /// Absent when the source file only carries one side's persona.
    pub persona_p0: Option<Persona>,
    pub persona_p1: Option<Persona>,
    pub turns: Vec<Turn>,
}

impl Episode {
    pub fn persona(&self, speaker: Speaker) -> Option<&Persona> {
        match speaker {
            Speaker::P0 => self.persona_p0.as_ref(),
            Speaker::P1 => self.persona_p1.as_ref(),
        }
    }

    /// Variant of the personas carried, if any persona is present.
    pub fn variant(&self) -> Option<Variant> {
        self.persona_p1
            .as_ref()
            .or(self.persona_p0.as_ref())
            .map(|p| p.variant)
    }

    /// Checks the structural invariants. `n_candidates` is the candidate
    /// count every labeled turn must carry, when the corpus declares one.
    pub fn validate(&self, n_candidates: Option<usize>) -> Result<(), CorpusError> {
        let invalid = |msg: String| CorpusError::Invalid {
            episode: self.id.clone(),
            msg,
        };
        if self.turns.len() < 2 {
            return Err(invalid(format!("{} turns, need at least 2", self.turns.len())));
        }
        for p in [&self.persona_p0, &self.persona_p1].into_iter().flatten() {
            p.validate().map_err(invalid)?;
        }
        if let (Some(a), Some(b)) = (&self.persona_p0, &self.persona_p1) {
            if a.variant != b.variant {
                return Err(invalid("personas carry different variants".into()));
            }
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Speaker::P0 } else { Speaker::P1 };
            if turn.speaker != expected {
                return Err(invalid(format!("turn {i}: speakers must alternate from p0")));
            }
            match (&turn.candidates, turn.gold_index) {
                (None, None) => {}
                (Some(c), Some(g)) => {
                    if c.get(g) != Some(&turn.text) {
                        return Err(invalid(format!("turn {i}: candidates[gold_index] differs from text")));
                    }
                    if let Some(n) = n_candidates {
                        if c.len() != n {
                            return Err(invalid(format!("turn {i}: {} candidates, expected {n}", c.len())));
                        }
                    }
                }
                _ => return Err(invalid(format!("turn {i}: candidates and gold_index must come together"))),
            }
        }
        Ok(())
    }
}

/// Checks that a revised persona keeps its original's id but not its text.
pub fn check_revision(original: &Persona, revised: &Persona) -> Result<(), String> {
    if original.id != revised.id {
        return Err(format!("revised persona id {} differs from {}", revised.id, original.id));
    }
    if original.sentences == revised.sentences {
        return Err(format!("revised persona {} is identical to its original", revised.id));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitStats {
    pub n_utterances: usize,
    pub n_episodes: usize,
    pub n_personas: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub n_utterances: usize,
    pub n_episodes: usize,
    pub n_personas: usize,
    pub per_split: BTreeMap<Split, SplitStats>,
}

impl CorpusStats {
    pub fn compute(episodes: &[Episode]) -> Self {
        let mut per_split: BTreeMap<Split, (SplitStats, BTreeSet<&str>)> = BTreeMap::new();
        let mut all_personas = BTreeSet::new();
        let mut stats = CorpusStats::default();
        for ep in episodes {
            let (s, personas) = per_split.entry(ep.split).or_default();
            s.n_episodes += 1;
            s.n_utterances += ep.turns.len();
            for p in [&ep.persona_p0, &ep.persona_p1].into_iter().flatten() {
                personas.insert(p.id.as_str());
                all_personas.insert(p.id.as_str());
            }
            stats.n_episodes += 1;
            stats.n_utterances += ep.turns.len();
        }
        stats.n_personas = all_personas.len();
        stats.per_split = per_split
            .into_iter()
            .map(|(k, (mut s, p))| {
                s.n_personas = p.len();
                (k, s)
            })
            .collect();
        stats
    }
}

// ---------------------------------------------------------------------------
// Line-format ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    MalformedLineNumber,
    FieldCount,
    GoldNotInCandidates,
    TooFewTurns,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub expect_candidates: bool,
    pub split: Split,
    pub variant: Variant,
    /// Prefix for generated episode ids; persona ids derive from them.
    pub id_prefix: String,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            expect_candidates: true,
            split: Split::Train,
            variant: Variant::Original,
            id_prefix: "train-".into(),
        }
    }
}

#[derive(Debug, Default)]
pub struct ParseOutput {
    pub episodes: Vec<Episode>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Default)]
struct EpisodeBuilder {
    start_line: usize,
    last_id: usize,
    p0: Vec<String>,
    p1: Vec<String>,
    turns: Vec<Turn>,
    aborted: bool,
}

/// Parses the released `<id> <payload>` line format. Episodes start where
/// the line id resets to 1. A malformed line aborts its episode only; the
/// reason lands in `diagnostics` and parsing resumes at the next episode.
pub fn parse_dialog_file<R: BufRead>(input: R, opts: &ParseOptions) -> Result<ParseOutput, CorpusError> {
    let mut out = ParseOutput::default();
    let mut current: Option<EpisodeBuilder> = None;
    let mut ordinal = 0usize;

    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let (id_text, payload) = line.split_once(' ').unwrap_or((line, ""));
        let id: Option<usize> = id_text.parse().ok().filter(|&n| n >= 1);

        if id == Some(1) {
            if let Some(b) = current.take() {
                finish_episode(b, ordinal, opts, &mut out);
                ordinal += 1;
            }
            current = Some(EpisodeBuilder {
                start_line: lineno,
                ..Default::default()
            });
        }
        let Some(b) = current.as_mut() else {
            // Lines before the first episode start.
            out.diagnostics.push(Diagnostic {
                line: lineno,
                kind: DiagnosticKind::MalformedLineNumber,
                message: format!("line id {id_text:?} does not start an episode"),
            });
            continue;
        };
        if b.aborted {
            continue;
        }
        match id {
            Some(n) if n == b.last_id + 1 => b.last_id = n,
            _ => {
                b.aborted = true;
                out.diagnostics.push(Diagnostic {
                    line: lineno,
                    kind: DiagnosticKind::MalformedLineNumber,
                    message: format!("expected line id {}, found {id_text:?}", b.last_id + 1),
                });
                continue;
            }
        }

        if let Some(s) = payload.strip_prefix("your persona:") {
            b.p1.push(s.trim().to_owned());
            continue;
        }
        if let Some(s) = payload.strip_prefix("partner's persona:") {
            b.p0.push(s.trim().to_owned());
            continue;
        }

        let fields: Vec<&str> = payload.split('\t').collect();
        let min_fields = if opts.expect_candidates { 4 } else { 2 };
        if fields.len() < min_fields || fields.len() > 4 {
            b.aborted = true;
            out.diagnostics.push(Diagnostic {
                line: lineno,
                kind: DiagnosticKind::FieldCount,
                message: format!("{} tab-separated fields, expected {min_fields}..=4", fields.len()),
            });
            continue;
        }
        let text = fields[0].to_owned();
        let label = fields[1].split('|').next().unwrap_or_default().to_owned();
        let candidates: Option<Vec<String>> = fields
            .get(3)
            .filter(|c| !c.is_empty())
            .map(|c| c.split('|').map(str::to_owned).collect());
        if opts.expect_candidates && candidates.is_none() {
            b.aborted = true;
            out.diagnostics.push(Diagnostic {
                line: lineno,
                kind: DiagnosticKind::FieldCount,
                message: "label_candidates field is empty".into(),
            });
            continue;
        }
        let gold_index = match &candidates {
            Some(c) => match c.iter().position(|x| *x == label) {
                Some(g) => Some(g),
                None => {
                    b.aborted = true;
                    out.diagnostics.push(Diagnostic {
                        line: lineno,
                        kind: DiagnosticKind::GoldNotInCandidates,
                        message: format!("label {label:?} is not among the candidates"),
                    });
                    continue;
                }
            },
            None => None,
        };
        b.turns.push(Turn::plain(Speaker::P0, text));
        b.turns.push(Turn {
            speaker: Speaker::P1,
            text: label,
            candidates,
            gold_index,
        });
    }
    if let Some(b) = current.take() {
        finish_episode(b, ordinal, opts, &mut out);
    }
    Ok(out)
}

fn finish_episode(b: EpisodeBuilder, ordinal: usize, opts: &ParseOptions, out: &mut ParseOutput) {
    if b.aborted {
        return;
    }
    if b.turns.len() < 2 {
        out.diagnostics.push(Diagnostic {
            line: b.start_line,
            kind: DiagnosticKind::TooFewTurns,
            message: "episode has no dialogue lines".into(),
        });
        return;
    }
    let id = format!("{}{ordinal}", opts.id_prefix);
    let persona = |sentences: Vec<String>, side: &str| {
        (!sentences.is_empty()).then(|| Persona {
            id: format!("{id}-{side}"),
            variant: opts.variant,
            sentences,
        })
    };
    out.episodes.push(Episode {
        persona_p0: persona(b.p0, "p0"),
        persona_p1: persona(b.p1, "p1"),
        id,
        split: opts.split,
        turns: b.turns,
    });
}

// ---------------------------------------------------------------------------
// Canonical JSONL
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeRecord {
    v: u32,
    id: String,
    split: Split,
    personas: Vec<PersonaRecord>,
    turns: Vec<TurnRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonaRecord {
    speaker: Speaker,
    id: String,
    variant: Variant,
    sentences: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnRecord {
    speaker: Speaker,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_index: Option<usize>,
}

fn to_record(ep: &Episode) -> EpisodeRecord {
    let personas = [(Speaker::P0, &ep.persona_p0), (Speaker::P1, &ep.persona_p1)]
        .into_iter()
        .filter_map(|(speaker, p)| {
            p.as_ref().map(|p| PersonaRecord {
                speaker,
                id: p.id.clone(),
                variant: p.variant,
                sentences: p.sentences.clone(),
            })
        })
        .collect();
    EpisodeRecord {
        v: SCHEMA_VERSION,
        id: ep.id.clone(),
        split: ep.split,
        personas,
        turns: ep
            .turns
            .iter()
            .map(|t| TurnRecord {
                speaker: t.speaker,
                text: t.text.clone(),
                candidates: t.candidates.clone(),
                gold_index: t.gold_index,
            })
            .collect(),
    }
}

fn from_record(r: EpisodeRecord) -> Result<Episode, CorpusError> {
    let mut ep = Episode {
        id: r.id,
        split: r.split,
        persona_p0: None,
        persona_p1: None,
        turns: r
            .turns
            .into_iter()
            .map(|t| Turn {
                speaker: t.speaker,
                text: t.text,
                candidates: t.candidates,
                gold_index: t.gold_index,
            })
            .collect(),
    };
    for p in r.personas {
        let slot = match p.speaker {
            Speaker::P0 => &mut ep.persona_p0,
            Speaker::P1 => &mut ep.persona_p1,
        };
        if slot.is_some() {
            return Err(CorpusError::Invalid {
                episode: ep.id,
                msg: format!("duplicate persona for {}", p.speaker),
            });
        }
        *slot = Some(Persona {
            id: p.id,
            variant: p.variant,
            sentences: p.sentences,
        });
    }
    ep.validate(None)?;
    Ok(ep)
}

/// Writes one JSON object per episode. Output is a pure function of the
/// input, so re-writing a loaded corpus reproduces it byte for byte.
pub fn write_canonical<W: Write>(episodes: &[Episode], mut out: W) -> Result<(), CorpusError> {
    for ep in episodes {
        ep.validate(None)?;
        let line = serde_json::to_string(&to_record(ep)).expect("episode records always serialize");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_canonical<R: BufRead>(input: R) -> Result<Vec<Episode>, CorpusError> {
    let mut episodes = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let record = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| CorpusError::Load {
            record,
            msg: e.to_string(),
        })?;
        match value.get("v").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(CorpusError::SchemaVersion {
                    record,
                    found: v as u32,
                })
            }
            None => {
                return Err(CorpusError::Load {
                    record,
                    msg: "missing schema version `v`".into(),
                })
            }
        }
        let r: EpisodeRecord = serde_json::from_value(value).map_err(|e| CorpusError::Load {
            record,
            msg: e.to_string(),
        })?;
        episodes.push(from_record(r)?);
    }
    Ok(episodes)
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

pub const STOPWORDS: &[&str] = &[
    "a", "about", "am", "an", "and", "are", "as", "at", "be", "been", "but", "do", "does", "for",
    "have", "i", "in", "is", "it", "me", "my", "of", "on", "or", "so", "that", "the", "this", "to",
    "too", "what", "with", "you", "your", ".", ",", "!", "?", "'",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// (original, revised) persona sentence templates; `{m}` is the trait's
/// distinguishing word and `{a}` its activity. Paired templates share no
/// non-stopword.
const PERSONA_TEMPLATES: &[(&str, &str)] = &[
    ("i like {m} {a} .", "i enjoy {m} {a} ."),
    ("my favorite hobby is {m} {a} .", "my preferred pastime is {m} {a} ."),
    ("i spend weekends doing {m} {a} .", "saturdays are for {m} {a} ."),
    ("i am really into {m} {a} .", "i am quite passionate about {m} {a} ."),
    ("i collect {m} {a} gear .", "i hoard {m} {a} equipment ."),
    ("every morning i practice {m} {a} .", "daily at dawn i train {m} {a} ."),
];

const ACTIVITIES: &[(&str, &str)] = &[
    ("skiing", "slalom"),
    ("hiking", "trekking"),
    ("cooking", "baking"),
    ("painting", "sketching"),
    ("fishing", "angling"),
    ("gardening", "planting"),
    ("cycling", "biking"),
    ("swimming", "diving"),
    ("chess", "checkers"),
    ("knitting", "crochet"),
    ("running", "jogging"),
    ("singing", "karaoke"),
];

const UTTERANCE_TEMPLATES: &[&str] = &[
    "i love {m} {a} , it is my thing .",
    "lately i have been doing a lot of {m} {a} .",
    "have you ever tried {m} {a} ? i do it daily .",
    "{m} {a} is what i do on weekends .",
    "honestly nothing beats {m} {a} .",
    "i just got back from some {m} {a} .",
];

const FOLLOW_UPS: &[&str] = &["do you still do {m} {a} ?", "how is your {m} {a} going ?"];

const ORIGINAL_SYLLABLES: &[&str] = &["ka", "zo", "ri", "mu", "te", "lo", "vi", "sa", "no", "pe", "du", "gi"];
const REVISED_SYLLABLES: &[&str] = &["bex", "qua", "fyr", "hul", "wen", "jor", "yth", "plo", "gav", "dro", "snu", "kip"];

/// Rewrites sentences so that no non-stopword survives: template words and
/// activities through a fixed synonym table, anything else through a
/// deterministic pseudo-word.
#[derive(Debug, Clone)]
pub struct Reviser {
    synonyms: BTreeMap<String, String>,
}

impl Default for Reviser {
    fn default() -> Self {
        let mut synonyms = BTreeMap::new();
        for (o, r) in ACTIVITIES {
            synonyms.insert((*o).to_owned(), (*r).to_owned());
        }
        for (o, r) in PERSONA_TEMPLATES {
            let orig: Vec<_> = tokenize(o).into_iter().filter(|t| !is_slot(t) && !is_stopword(t)).collect();
            let rev: Vec<_> = tokenize(r).into_iter().filter(|t| !is_slot(t) && !is_stopword(t)).collect();
            // Only used for stray template words outside `revise_persona_sentence`.
            for (a, b) in orig.iter().zip(rev.iter().cycle()) {
                synonyms.entry(a.clone()).or_insert_with(|| b.clone());
            }
        }
        Reviser { synonyms }
    }
}

fn is_slot(t: &str) -> bool {
    t == "{m}" || t == "{a}"
}

impl Reviser {
    pub fn with_synonym(mut self, word: &str, replacement: &str) -> Self {
        self.synonyms.insert(word.to_owned(), replacement.to_owned());
        self
    }

    pub fn revise_word(&self, word: &str) -> String {
        if is_stopword(word) {
            return word.to_owned();
        }
        if let Some(s) = self.synonyms.get(word) {
            return s.clone();
        }
        pseudo_word(word)
    }

    /// Token-wise revision of free text.
    pub fn revise(&self, sentence: &str) -> String {
        tokenize(sentence)
            .iter()
            .map(|t| self.revise_word(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Deterministic stand-in synonym built from syllables that never occur in
/// generated original words.
fn pseudo_word(word: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut out = String::new();
    for _ in 0..3 {
        out.push_str(REVISED_SYLLABLES[(h % REVISED_SYLLABLES.len() as u64) as usize]);
        h /= REVISED_SYLLABLES.len() as u64;
    }
    if out == word {
        out.push('x');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_personas: usize,
    pub n_traits: usize,
    pub n_episodes: usize,
    pub turns_per_episode: usize,
    pub n_candidates: usize,
    pub seed: u64,
    /// Chance that an utterance also asks about a partner trait already
    /// mentioned in the dialogue.
    pub follow_up_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_personas: 20,
            n_traits: 5,
            n_episodes: 200,
            turns_per_episode: 8,
            n_candidates: DEFAULT_CANDIDATES,
            seed: 7,
            follow_up_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Trait {
    modifier: String,
    revised_modifier: String,
    activity: usize,
    template: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// Every dialogue once with original personas, then again (same ids)
    /// with revised personas.
    pub episodes: Vec<Episode>,
    pub personas: Vec<Persona>,
    pub revised_personas: Vec<Persona>,
    /// Distinguishing words per persona, aligned with `personas`.
    pub trait_tokens: Vec<Vec<String>>,
}

impl SyntheticCorpus {
    pub fn variant(&self, variant: Variant) -> Vec<Episode> {
        self.episodes
            .iter()
            .filter(|e| e.variant() == Some(variant))
            .cloned()
            .collect()
    }
}

fn fill(template: &str, t: &Trait, revised: bool) -> String {
    let (m, a) = if revised {
        (&t.revised_modifier, ACTIVITIES[t.activity].1)
    } else {
        (&t.modifier, ACTIVITIES[t.activity].0)
    };
    template.replace("{m}", m).replace("{a}", a)
}

/// Generates a persona corpus where every gold reply names one of its
/// speaker's traits and no distractor names any of them.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus, CorpusError> {
    let bad = |m: &str| Err(CorpusError::Config(m.to_owned()));
    if cfg.n_personas == 0 || cfg.n_traits == 0 || cfg.n_episodes == 0 || cfg.turns_per_episode == 0 {
        return bad("all counts must be at least 1");
    }
    if cfg.n_candidates < 2 {
        return bad("n_candidates must be at least 2");
    }
    if cfg.n_personas < 2 {
        return bad("need at least 2 personas to draw distractors from other personas");
    }
    if cfg.turns_per_episode < 2 {
        return bad("episodes need at least 2 turns");
    }
    let n_words = ORIGINAL_SYLLABLES.len().pow(3);
    if cfg.n_personas * cfg.n_traits > n_words {
        return bad("trait pool too small for the requested personas");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut words: Vec<usize> = (0..n_words).collect();
    words.shuffle(&mut rng);
    let word = |code: usize, syl: &[&str]| -> String {
        let n = syl.len();
        [code / (n * n), (code / n) % n, code % n].iter().map(|&i| syl[i]).collect()
    };

    let mut traits: Vec<Vec<Trait>> = Vec::with_capacity(cfg.n_personas);
    for p in 0..cfg.n_personas {
        let mut templates: Vec<usize> = (0..PERSONA_TEMPLATES.len()).collect();
        templates.shuffle(&mut rng);
        let ts = (0..cfg.n_traits)
            .map(|j| {
                let code = words[p * cfg.n_traits + j];
                Trait {
                    modifier: word(code, ORIGINAL_SYLLABLES),
                    revised_modifier: word(code, REVISED_SYLLABLES),
                    activity: rng.random_range(0..ACTIVITIES.len()),
                    template: templates[j % templates.len()],
                }
            })
            .collect();
        traits.push(ts);
    }

    let persona_id = |p: usize| format!("persona-{p:03}");
    let personas: Vec<Persona> = traits
        .iter()
        .enumerate()
        .map(|(p, ts)| Persona {
            id: persona_id(p),
            variant: Variant::Original,
            sentences: ts.iter().map(|t| fill(PERSONA_TEMPLATES[t.template].0, t, false)).collect(),
        })
        .collect();
    let revised_personas: Vec<Persona> = traits
        .iter()
        .enumerate()
        .map(|(p, ts)| Persona {
            id: persona_id(p),
            variant: Variant::Revised,
            sentences: ts.iter().map(|t| fill(PERSONA_TEMPLATES[t.template].1, t, true)).collect(),
        })
        .collect();
    let trait_tokens: Vec<Vec<String>> = traits
        .iter()
        .map(|ts| ts.iter().map(|t| t.modifier.clone()).collect())
        .collect();

    // Dialogue text first; candidates need the full utterance pool.
    struct Draft {
        pair: [usize; 2],
        turns: Vec<String>,
    }
    let mut drafts = Vec::with_capacity(cfg.n_episodes);
    // (persona, text) for every utterance, the distractor pool.
    let mut pool: Vec<(usize, String)> = Vec::new();
    for _ in 0..cfg.n_episodes {
        let a = rng.random_range(0..cfg.n_personas);
        let mut b = rng.random_range(0..cfg.n_personas - 1);
        if b >= a {
            b += 1;
        }
        let pair = [a, b];
        let mut order: [Vec<usize>; 2] = [
            (0..cfg.n_traits).collect(),
            (0..cfg.n_traits).collect(),
        ];
        order[0].shuffle(&mut rng);
        order[1].shuffle(&mut rng);
        let mut mentioned: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        let mut turns = Vec::with_capacity(cfg.turns_per_episode);
        for k in 0..cfg.turns_per_episode {
            let side = k % 2;
            let me = pair[side];
            let t = order[side][(k / 2) % cfg.n_traits];
            let tmpl = UTTERANCE_TEMPLATES.choose(&mut rng).unwrap();
            let mut text = fill(tmpl, &traits[me][t], false);
            let partner_said = &mentioned[1 - side];
            if !partner_said.is_empty() && rng.random_bool(cfg.follow_up_rate) {
                let pt = partner_said[rng.random_range(0..partner_said.len())];
                let follow = FOLLOW_UPS.choose(&mut rng).unwrap();
                text.push(' ');
                text.push_str(&fill(follow, &traits[pair[1 - side]][pt], false));
            }
            mentioned[side].push(t);
            pool.push((me, text.clone()));
            turns.push(text);
        }
        drafts.push(Draft { pair, turns });
    }

    let token_sets: Vec<HashSet<String>> = pool.iter().map(|(_, t)| tokenize(t).into_iter().collect()).collect();
    let trait_sets: Vec<HashSet<&str>> = trait_tokens
        .iter()
        .map(|ts| ts.iter().map(String::as_str).collect())
        .collect();

    let mut episodes = Vec::with_capacity(cfg.n_episodes * 2);
    let mut revised_eps = Vec::with_capacity(cfg.n_episodes);
    for (e, d) in drafts.iter().enumerate() {
        let split = match e % 10 {
            8 => Split::Valid,
            9 => Split::Test,
            _ => Split::Train,
        };
        let mut turns = Vec::with_capacity(d.turns.len());
        for (k, text) in d.turns.iter().enumerate() {
            let me = d.pair[k % 2];
            let mine = &trait_sets[me];
            let mut distractors: Vec<&str> = Vec::with_capacity(cfg.n_candidates - 1);
            let mut seen: HashSet<&str> = HashSet::new();
            seen.insert(text.as_str());
            let mut attempts = 0;
            while distractors.len() < cfg.n_candidates - 1 {
                attempts += 1;
                if attempts > 10_000 {
                    return bad("trait pool too small to separate distractors from gold replies");
                }
                let j = rng.random_range(0..pool.len());
                let (owner, cand) = (&pool[j].0, pool[j].1.as_str());
                if *owner == me || seen.contains(cand) {
                    continue;
                }
                if token_sets[j].iter().any(|t| mine.contains(t.as_str())) {
                    continue;
                }
                seen.insert(cand);
                distractors.push(cand);
            }
            let gold_index = rng.random_range(0..cfg.n_candidates);
            let mut candidates: Vec<String> = distractors.into_iter().map(str::to_owned).collect();
            candidates.insert(gold_index, text.clone());
            turns.push(Turn {
                speaker: if k % 2 == 0 { Speaker::P0 } else { Speaker::P1 },
                text: text.clone(),
                candidates: Some(candidates),
                gold_index: Some(gold_index),
            });
        }
        let id = format!("synth-{e:05}");
        episodes.push(Episode {
            id: id.clone(),
            split,
            persona_p0: Some(personas[d.pair[0]].clone()),
            persona_p1: Some(personas[d.pair[1]].clone()),
            turns: turns.clone(),
        });
        revised_eps.push(Episode {
            id,
            split,
            persona_p0: Some(revised_personas[d.pair[0]].clone()),
            persona_p1: Some(revised_personas[d.pair[1]].clone()),
            turns,
        });
    }
    episodes.extend(revised_eps);

    Ok(SyntheticCorpus {
        episodes,
        personas,
        revised_personas,
        trait_tokens,
    })
}

// ---------------------------------------------------------------------------
// Examples
// ---------------------------------------------------------------------------

/// One next-utterance prediction instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub episode_id: String,
    pub turn: usize,
    pub speaker: Speaker,
    pub context: Vec<String>,
    pub profile: Vec<String>,
    pub gold: String,
    pub candidates: Vec<String>,
    pub gold_index: usize,
}

/// Profile sentences a given conditioning mode exposes to the replier.
pub fn profile_for(
    episode: &Episode,
    replier: Speaker,
    mode: ConditioningMode,
) -> Result<Vec<String>, CorpusError> {
    let get = |s: Speaker| {
        episode
            .persona(s)
            .map(|p| p.sentences.clone())
            .ok_or_else(|| CorpusError::PersonaMissing {
                episode: episode.id.clone(),
                speaker: s,
            })
    };
    Ok(match mode {
        ConditioningMode::None => Vec::new(),
        ConditioningMode::Own => get(replier)?,
        ConditioningMode::Their => get(replier.other())?,
        ConditioningMode::Both => {
            let mut v = get(replier)?;
            v.extend(get(replier.other())?);
            v
        }
    })
}

/// One example per labeled turn of episodes carrying `variant` personas.
/// `side` restricts to turns spoken by one speaker; the replier is always
/// "self".
pub fn build_examples(
    episodes: &[Episode],
    mode: ConditioningMode,
    variant: Variant,
    side: Option<Speaker>,
) -> Result<Vec<Example>, CorpusError> {
    let selected: Vec<&Episode> = episodes
        .iter()
        .filter(|e| e.variant() == Some(variant) || (mode == ConditioningMode::None && e.variant().is_none()))
        .collect();
    if selected.is_empty() && !episodes.is_empty() {
        return Err(CorpusError::VariantMissing(variant));
    }
    let mut out = Vec::new();
    for ep in selected {
        for (k, turn) in ep.turns.iter().enumerate() {
            let (Some(candidates), Some(gold_index)) = (&turn.candidates, turn.gold_index) else {
                continue;
            };
            if side.is_some_and(|s| s != turn.speaker) {
                continue;
            }
            out.push(Example {
                episode_id: ep.id.clone(),
                turn: k,
                speaker: turn.speaker,
                context: ep.turns[..k].iter().map(|t| t.text.clone()).collect(),
                profile: profile_for(ep, turn.speaker, mode)?,
                gold: turn.text.clone(),
                candidates: candidates.clone(),
                gold_index,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
1 your persona: i like to ski.
2 your persona: my wife does not like me anymore.
3 your persona: i have went to mexico 4 times this year.
4 your persona: i hate mexican food.
5 your persona: i like to eat cheetos.
6 hi , how are you doing ?\tgood , you ?\t\tnope|good , you ?|cool
7 fine thanks .\tgreat to hear .\t\tgreat to hear .|no
";

    #[test]
    fn parses_fixture_episode() {
        let out = parse_dialog_file(FIXTURE.as_bytes(), &ParseOptions::default()).unwrap();
        assert!(out.diagnostics.is_empty(), "{:?}", out.diagnostics);
        assert_eq!(out.episodes.len(), 1);
        let ep = &out.episodes[0];
        assert_eq!(ep.persona_p1.as_ref().unwrap().sentences.len(), 5);
        assert!(ep.persona_p0.is_none());
        assert_eq!(ep.turns.len(), 4);
        ep.validate(None).unwrap();
        assert_eq!(CorpusStats::compute(&out.episodes).n_utterances, 4);
    }

    #[test]
    fn line_fields_map_to_turns() {
        let out = parse_dialog_file("3 hi\tthere\t\tc1|c2|there\n".replace('3', "1").as_bytes(), &ParseOptions::default())
            .unwrap();
        let turns = &out.episodes[0].turns;
        assert_eq!(turns[0], Turn::plain(Speaker::P0, "hi"));
        assert_eq!(turns[1].text, "there");
        assert_eq!(turns[1].candidates.as_deref().unwrap(), ["c1", "c2", "there"]);
        assert_eq!(turns[1].gold_index, Some(2));
    }

    #[test]
    fn partner_persona_goes_to_p0() {
        let src = "1 partner's persona: i am tall.\n2 your persona: i am short.\n3 a\tb\t\tb|c\n";
        let out = parse_dialog_file(src.as_bytes(), &ParseOptions::default()).unwrap();
        let ep = &out.episodes[0];
        assert_eq!(ep.persona_p0.as_ref().unwrap().sentences, ["i am tall."]);
        assert_eq!(ep.persona_p1.as_ref().unwrap().sentences, ["i am short."]);
    }

    #[test]
    fn malformed_episode_is_skipped_with_diagnostics() {
        let src = "\
1 a\tb\t\tb|c
x broken
3 c\td\t\td|e
1 e\tf\t\tz|y
1 g\th
1 i\tj\t\tj|k
2 k\tl\t\tl|m
";
        let out = parse_dialog_file(src.as_bytes(), &ParseOptions::default()).unwrap();
        let kinds: Vec<_> = out.diagnostics.iter().map(|d| (d.line, d.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (2, DiagnosticKind::MalformedLineNumber),
                (4, DiagnosticKind::GoldNotInCandidates),
                (5, DiagnosticKind::FieldCount),
            ]
        );
        assert_eq!(out.episodes.len(), 1);
        assert_eq!(out.episodes[0].turns.len(), 4);
        // Ordinals count attempted episodes so ids align across variant files.
        assert_eq!(out.episodes[0].id, "train-3");
    }

    #[test]
    fn candidates_optional_without_expectation() {
        let opts = ParseOptions {
            expect_candidates: false,
            ..Default::default()
        };
        let out = parse_dialog_file("1 hello\thi there\n2 how are you\tfine\n".as_bytes(), &opts).unwrap();
        assert_eq!(out.episodes[0].turns.len(), 4);
        assert!(out.episodes[0].turns.iter().all(|t| !t.is_labeled()));
    }

    fn tiny_episode() -> Episode {
        Episode {
            id: "e1".into(),
            split: Split::Valid,
            persona_p0: Some(Persona {
                id: "pa".into(),
                variant: Variant::Original,
                sentences: vec!["i am a.".into()],
            }),
            persona_p1: Some(Persona {
                id: "pb".into(),
                variant: Variant::Original,
                sentences: vec!["i am b.".into(), "i like c.".into()],
            }),
            turns: vec![
                Turn::plain(Speaker::P0, "hello"),
                Turn {
                    speaker: Speaker::P1,
                    text: "hey".into(),
                    candidates: Some(vec!["no".into(), "hey".into()]),
                    gold_index: Some(1),
                },
            ],
        }
    }

    #[test]
    fn canonical_round_trip_is_byte_exact() {
        let eps = vec![tiny_episode()];
        let mut a = Vec::new();
        write_canonical(&eps, &mut a).unwrap();
        let back = load_canonical(&a[..]).unwrap();
        assert_eq!(back, eps);
        let mut b = Vec::new();
        write_canonical(&back, &mut b).unwrap();
        assert_eq!(a, b);
        let line = String::from_utf8(a).unwrap();
        assert!(line.starts_with(r#"{"v":1,"id":"e1","split":"valid","personas":[{"speaker":"p0""#));
    }

    #[test]
    fn canonical_empty() {
        let mut a = Vec::new();
        write_canonical(&[], &mut a).unwrap();
        assert!(a.is_empty());
        assert!(load_canonical(&a[..]).unwrap().is_empty());
    }

    #[test]
    fn canonical_errors_name_the_record() {
        let mut a = Vec::new();
        write_canonical(&[tiny_episode(), tiny_episode()], &mut a).unwrap();
        let text = String::from_utf8(a).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let truncated = &lines[1][..lines[1].len() / 2];
        lines[1] = truncated;
        let err = load_canonical(lines.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Load { record: 2, .. }), "{err}");

        let v2 = text.lines().next().unwrap().replacen("\"v\":1", "\"v\":2", 1);
        assert!(matches!(
            load_canonical(v2.as_bytes()).unwrap_err(),
            CorpusError::SchemaVersion { record: 1, found: 2 }
        ));

        let bad_gold = text.lines().next().unwrap().replace("\"gold_index\":1", "\"gold_index\":0");
        assert!(matches!(load_canonical(bad_gold.as_bytes()).unwrap_err(), CorpusError::Invalid { .. }));
    }

    #[test]
    fn validate_rejects_non_alternating_and_wrong_count() {
        let mut ep = tiny_episode();
        ep.validate(Some(2)).unwrap();
        assert!(ep.validate(Some(20)).is_err());
        ep.turns[1].speaker = Speaker::P0;
        assert!(ep.validate(None).is_err());
    }

    #[test]
    fn examples_follow_mode() {
        let eps = vec![tiny_episode()];
        let none = build_examples(&eps, ConditioningMode::None, Variant::Original, None).unwrap();
        assert_eq!(none.len(), 1);
        assert!(none[0].profile.is_empty());
        assert_eq!(none[0].context, ["hello"]);
        assert_eq!(none[0].candidates[none[0].gold_index], none[0].gold);

        let own = build_examples(&eps, ConditioningMode::Own, Variant::Original, None).unwrap();
        assert_eq!(own[0].profile, ["i am b.", "i like c."]);
        let their = build_examples(&eps, ConditioningMode::Their, Variant::Original, None).unwrap();
        assert_eq!(their[0].profile, ["i am a."]);
        let both = build_examples(&eps, ConditioningMode::Both, Variant::Original, None).unwrap();
        assert_eq!(both[0].profile, ["i am b.", "i like c.", "i am a."]);

        assert!(matches!(
            build_examples(&eps, ConditioningMode::Own, Variant::Revised, None),
            Err(CorpusError::VariantMissing(Variant::Revised))
        ));
        assert!(build_examples(&eps, ConditioningMode::None, Variant::Original, Some(Speaker::P0))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn both_mode_puts_self_first() {
        let cfg = SynthConfig {
            n_episodes: 30,
            ..Default::default()
        };
        let corpus = generate_synthetic(&cfg).unwrap();
        let eps = corpus.variant(Variant::Original);
        let ex = build_examples(&eps, ConditioningMode::Both, Variant::Original, None).unwrap();
        for e in &ex {
            let ep = eps.iter().find(|x| x.id == e.episode_id).unwrap();
            let own = &ep.persona(e.speaker).unwrap().sentences;
            let their = &ep.persona(e.speaker.other()).unwrap().sentences;
            assert_eq!(e.profile.len(), own.len() + their.len());
            assert_eq!(&e.profile[..own.len()], &own[..]);
        }
    }

    #[test]
    fn reviser_drops_every_content_word() {
        let r = Reviser::default();
        let orig = "i like alpha skiing";
        let rev = r.revise(orig);
        let orig_words: HashSet<String> = tokenize(orig).into_iter().filter(|t| !is_stopword(t)).collect();
        assert!(tokenize(&rev).iter().all(|t| is_stopword(t) || !orig_words.contains(t)), "{rev}");
        assert!(rev.starts_with("i "));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SynthConfig::default();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_canonical(&generate_synthetic(&cfg).unwrap().episodes, &mut a).unwrap();
        write_canonical(&generate_synthetic(&cfg).unwrap().episodes, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_gold_and_distractor_separation() {
        let cfg = SynthConfig::default();
        let c = generate_synthetic(&cfg).unwrap();
        let by_id: BTreeMap<&str, usize> = c.personas.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
        for ep in c.variant(Variant::Original) {
            ep.validate(Some(cfg.n_candidates)).unwrap();
            for t in &ep.turns {
                let p = by_id[ep.persona(t.speaker).unwrap().id.as_str()];
                let traits: HashSet<&str> = c.trait_tokens[p].iter().map(String::as_str).collect();
                let shares = |s: &str| tokenize(s).iter().any(|w| traits.contains(w.as_str()));
                assert!(shares(&t.text), "gold {:?} misses persona traits", t.text);
                let cands = t.candidates.as_ref().unwrap();
                for (i, cand) in cands.iter().enumerate() {
                    if i != t.gold_index.unwrap() {
                        assert!(!shares(cand), "distractor {cand:?} leaks a trait");
                    }
                }
            }
        }
    }

    #[test]
    fn synthetic_revised_personas_share_no_content_words() {
        let c = generate_synthetic(&SynthConfig::default()).unwrap();
        for (o, r) in c.personas.iter().zip(&c.revised_personas) {
            check_revision(o, r).unwrap();
            for (so, sr) in o.sentences.iter().zip(&r.sentences) {
                let ow: HashSet<String> = tokenize(so).into_iter().filter(|t| !is_stopword(t)).collect();
                assert!(tokenize(sr).iter().all(|t| is_stopword(t) || !ow.contains(t)), "{so} / {sr}");
            }
        }
    }

    #[test]
    fn synthetic_config_errors() {
        let bad = SynthConfig {
            n_candidates: 1,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&bad), Err(CorpusError::Config(_))));
        let one = SynthConfig {
            n_personas: 1,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&one), Err(CorpusError::Config(_))));
    }

    #[test]
    fn stats_sum_over_splits() {
        let c = generate_synthetic(&SynthConfig::default()).unwrap();
        let eps = c.variant(Variant::Original);
        let s = CorpusStats::compute(&eps);
        assert_eq!(s.n_episodes, 200);
        assert_eq!(s.per_split.values().map(|x| x.n_episodes).sum::<usize>(), s.n_episodes);
        assert_eq!(s.per_split.values().map(|x| x.n_utterances).sum::<usize>(), s.n_utterances);
        assert_eq!(s.n_utterances, eps.iter().map(|e| e.turns.len()).sum::<usize>());
    }
}
