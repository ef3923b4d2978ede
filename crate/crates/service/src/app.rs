//! Session operations, independent of the HTTP layer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::{DateTime, Utc};
use personachat::corpus::{load_canonical, ConditioningMode, CorpusError, Episode, Persona, Split, Variant};
use personachat::eval::Evaluable;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;
use tokio::sync::Mutex;
use uuid::Uuid;

use crate::config::ServiceConfig;
use crate::eventlog::{EventLog, LogError};
use crate::models::{self, load_model, ModelError, ModelType};
use crate::session::{
    over_length, Aggregate, EvaluationRecord, Event, Message, ProfileChoice, Quiz, QuizKey, Session, SessionState,
};

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Corpus { path: PathBuf, source: CorpusError },
    #[error("model {id}: {source}")]
    Model { id: String, source: ModelError },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("event log record {record}: {msg}")]
    Replay { record: usize, msg: String },
}

/// Error body `{error, message}` with an HTTP status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn invalid_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        let message = message.into();
        log::error!("{message}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn session_not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id}"))
    }

    fn wrong_state(state: SessionState, op: &str) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "wrong_state",
            format!("cannot {op} while the session is {}", state_name(state)),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.code, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

fn state_name(s: SessionState) -> &'static str {
    match s {
        SessionState::Chatting => "chatting",
        SessionState::AwaitingRating => "awaiting_rating",
        SessionState::Closed => "closed",
    }
}

/// A loaded model and the persona view it chats with.
#[derive(Clone)]
pub struct ChatModel {
    pub kind: ModelType,
    pub engine: Evaluable,
    pub mode: ConditioningMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CreatedSession {
    pub session_id: Uuid,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageReply {
    pub reply: String,
    pub over_length: bool,
}

/// What `GET /v1/sessions/{id}` shows. The model persona is never part of
/// it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    pub session_id: Uuid,
    pub model_id: String,
    pub state: SessionState,
    pub created: DateTime<Utc>,
    pub transcript: Vec<Message>,
    pub human_turns: usize,
    pub quiz_min_turns: usize,
    pub quiz_eligible: bool,
    pub evaluation: Option<EvaluationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuizPersona {
    pub key: QuizKey,
    pub id: String,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuizView {
    pub personas: Vec<QuizPersona>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub n_sessions: usize,
    #[serde(flatten)]
    pub overall: Aggregate,
    pub models: BTreeMap<String, Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: ModelType,
    pub mode: ConditioningMode,
}

/// Distinct personas of the test split, in order of first appearance.
pub fn test_personas(episodes: &[Episode], variant: Variant) -> Vec<Persona> {
    let mut seen = HashSet::new();
    episodes
        .iter()
        .filter(|e| e.split == Split::Test)
        .flat_map(|e| [&e.persona_p0, &e.persona_p1])
        .flatten()
        .filter(|p| p.variant == variant && seen.insert(p.id.clone()))
        .cloned()
        .collect()
}

/// Distinct training utterances, in corpus order.
pub fn training_utterances(episodes: &[Episode]) -> Vec<String> {
    let mut seen = HashSet::new();
    episodes
        .iter()
        .filter(|e| e.split == Split::Train)
        .flat_map(|e| &e.turns)
        .filter(|t| seen.insert(t.text.as_str()))
        .map(|t| t.text.clone())
        .collect()
}

pub struct AppState {
    models: BTreeMap<String, ChatModel>,
    personas: Vec<Persona>,
    pool: Arc<Vec<String>>,
    quiz_min_turns: usize,
    log: EventLog,
    sessions: RwLock<HashMap<Uuid, Arc<Mutex<Session>>>>,
    pub static_dir: Option<PathBuf>,
}

impl AppState {
    /// Builds the state and replays `events` (the log's current content).
    pub fn new(
        models: BTreeMap<String, ChatModel>,
        personas: Vec<Persona>,
        pool: Vec<String>,
        quiz_min_turns: usize,
        log: EventLog,
        events: Vec<Event>,
    ) -> Result<Self, StartupError> {
        if personas.is_empty() {
            return Err(StartupError::Config("the test persona pool is empty".into()));
        }
        for (id, m) in &models {
            if !matches!(m.mode, ConditioningMode::None | ConditioningMode::Own) {
                return Err(StartupError::Config(format!(
                    "model {id}: mode {} needs the human's persona; use none or self",
                    m.mode
                )));
            }
            if matches!(m.engine, Evaluable::Ranker(_)) && pool.is_empty() {
                return Err(StartupError::Config(format!("model {id}: ranking models need a reply pool")));
            }
        }
        let mut sessions: HashMap<Uuid, Session> = HashMap::new();
        for (i, event) in events.iter().enumerate() {
            let bad = |msg: String| StartupError::Replay { record: i + 1, msg };
            let id = event.session_id();
            if let Some(s) = Session::create(event) {
                if sessions.insert(id, s).is_some() {
                    return Err(bad(format!("session {id} created twice")));
                }
            } else {
                let s = sessions
                    .get_mut(&id)
                    .ok_or_else(|| bad(format!("unknown session {id}")))?;
                s.apply(event).map_err(bad)?;
            }
        }
        log::info!("replayed {} events into {} sessions", events.len(), sessions.len());
        Ok(AppState {
            models,
            personas,
            pool: Arc::new(pool),
            quiz_min_turns,
            log,
            sessions: RwLock::new(sessions.into_iter().map(|(k, v)| (k, Arc::new(Mutex::new(v)))).collect()),
            static_dir: None,
        })
    }

    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, StartupError> {
        let open = |path: &PathBuf| {
            File::open(path).map(BufReader::new).map_err(|source| StartupError::Io {
                path: path.clone(),
                source,
            })
        };
        let episodes = load_canonical(open(&cfg.corpus)?).map_err(|source| StartupError::Corpus {
            path: cfg.corpus.clone(),
            source,
        })?;
        let pool = match &cfg.reply_pool {
            Some(path) => open(path)?
                .lines()
                .map(|l| l.map(|l| l.trim().to_owned()))
                .filter(|l| l.as_ref().map_or(true, |l| !l.is_empty()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|source| StartupError::Io {
                    path: path.clone(),
                    source,
                })?,
            None => training_utterances(&episodes),
        };
        let mut models = BTreeMap::new();
        for (id, entry) in &cfg.models {
            let engine = load_model(&entry.path, entry.kind).map_err(|source| StartupError::Model {
                id: id.clone(),
                source,
            })?;
            models.insert(
                id.clone(),
                ChatModel {
                    kind: entry.kind,
                    engine,
                    mode: entry.mode,
                },
            );
        }
        let (log, events) = EventLog::open(&cfg.event_log)?;
        let mut state = AppState::new(
            models,
            test_personas(&episodes, cfg.variant),
            pool,
            cfg.quiz_min_turns,
            log,
            events,
        )?;
        state.static_dir = cfg.static_dir.clone();
        Ok(state)
    }

    pub fn models(&self) -> Vec<ModelInfo> {
        self.models
            .iter()
            .map(|(id, m)| ModelInfo {
                id: id.clone(),
                kind: m.kind,
                mode: m.mode,
            })
            .collect()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let uuid = Uuid::parse_str(id).map_err(|_| ApiError::session_not_found(id))?;
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&uuid)
            .cloned()
            .ok_or_else(|| ApiError::session_not_found(id))
    }

    fn record(&self, event: &Event) -> Result<(), ApiError> {
        self.log
            .append(event)
            .map_err(|e| ApiError::internal(format!("event log write failed: {e}")))
    }

    /// Samples the hidden persona (seeded when `seed` is given) and opens a
    /// session.
    pub fn create_session(&self, model_id: &str, seed: Option<u64>) -> Result<CreatedSession, ApiError> {
        if !self.models.contains_key(model_id) {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown_model",
                format!("no model {model_id:?}"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or_else(rand::random));
        let persona = self.personas[rng.random_range(0..self.personas.len())].clone();
        let event = Event::SessionCreated {
            session_id: Uuid::new_v4(),
            model_id: model_id.to_owned(),
            persona,
            seed,
            quiz_seed: rng.random(),
            at: Utc::now(),
        };
        let session = Session::create(&event).expect("creation event");
        self.record(&event)?;
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(session.id, Arc::new(Mutex::new(session)));
        Ok(CreatedSession {
            session_id: event.session_id(),
            model_id: model_id.to_owned(),
        })
    }

    pub async fn post_message(&self, id: &str, text: &str) -> Result<MessageReply, ApiError> {
        let cell = self.session(id)?;
        let mut s = cell.lock().await;
        match s.state {
            SessionState::Chatting => {}
            SessionState::Closed => {
                return Err(ApiError::new(StatusCode::CONFLICT, "session_closed", "the session is closed"))
            }
            state => return Err(ApiError::wrong_state(state, "send messages")),
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty_text", "message text is empty"));
        }
        let model = self.models.get(&s.model_id).ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown_model",
                format!("model {:?} is no longer configured", s.model_id),
            )
        })?;
        let human_at = Utc::now();
        let mut context = s.texts();
        context.push(text.to_owned());
        let profile = match model.mode {
            ConditioningMode::None => Vec::new(),
            _ => s.persona.sentences.clone(),
        };
        let engine = model.engine.clone();
        let pool = Arc::clone(&self.pool);
        let reply = tokio::task::spawn_blocking(move || models::reply(&engine, &context, &profile, &pool))
            .await
            .map_err(|e| ApiError::internal(format!("reply failed: {e}")))?
            .ok_or_else(|| ApiError::internal("the reply pool is empty"))?;
        let event = Event::Message {
            session_id: s.id,
            human: text.to_owned(),
            human_at,
            reply: reply.clone(),
            reply_at: Utc::now(),
        };
        self.record(&event)?;
        s.apply(&event).map_err(ApiError::internal)?;
        Ok(MessageReply {
            over_length: over_length(&reply),
            reply,
        })
    }

    pub async fn view(&self, id: &str) -> Result<SessionView, ApiError> {
        let cell = self.session(id)?;
        let s = cell.lock().await;
        let human_turns = s.human_turns();
        Ok(SessionView {
            session_id: s.id,
            model_id: s.model_id.clone(),
            state: s.state,
            created: s.created,
            transcript: s.transcript.clone(),
            human_turns,
            quiz_min_turns: self.quiz_min_turns,
            quiz_eligible: s.state != SessionState::Closed && human_turns >= self.quiz_min_turns,
            evaluation: s.evaluation.clone(),
        })
    }

    /// Issues the quiz once; later calls return the same pair in the same
    /// order.
    pub async fn quiz(&self, id: &str) -> Result<QuizView, ApiError> {
        let cell = self.session(id)?;
        let mut s = cell.lock().await;
        if s.quiz.is_none() {
            let turns = s.human_turns();
            if turns < self.quiz_min_turns {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "dialogue_too_short",
                    format!("the quiz needs {} human turns, the session has {turns}", self.quiz_min_turns),
                ));
            }
            let others: Vec<&Persona> = self.personas.iter().filter(|p| p.id != s.persona.id).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(s.quiz_seed);
            let distractor = (*others.choose(&mut rng).ok_or_else(|| {
                ApiError::new(
                    StatusCode::CONFLICT,
                    "quiz_unavailable",
                    "the test persona pool has no distractor",
                )
            })?)
            .clone();
            let (personas, true_key) = if rng.random_bool(0.5) {
                ([s.persona.clone(), distractor], QuizKey::A)
            } else {
                ([distractor, s.persona.clone()], QuizKey::B)
            };
            let event = Event::QuizIssued {
                session_id: s.id,
                quiz: Quiz { personas, true_key },
                at: Utc::now(),
            };
            self.record(&event)?;
            s.apply(&event).map_err(ApiError::internal)?;
        }
        let quiz = s.quiz.as_ref().expect("quiz issued");
        Ok(QuizView {
            personas: [QuizKey::A, QuizKey::B]
                .into_iter()
                .zip(&quiz.personas)
                .map(|(key, p)| QuizPersona {
                    key,
                    id: p.id.clone(),
                    sentences: p.sentences.clone(),
                })
                .collect(),
        })
    }

    /// Stores the ratings and quiz answer from a JSON body with integer
    /// `fluency`, `engagingness`, `consistency` and `profile_choice` "A"/"B".
    pub async fn evaluate(&self, id: &str, body: &Value) -> Result<EvaluationRecord, ApiError> {
        let cell = self.session(id)?;
        let mut s = cell.lock().await;
        match s.state {
            SessionState::AwaitingRating => {}
            SessionState::Closed => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "duplicate_submission",
                    "this session has already been rated",
                ))
            }
            state => return Err(ApiError::wrong_state(state, "submit an evaluation")),
        }
        let score = |field: &str| -> Result<u8, ApiError> {
            body.get(field)
                .and_then(Value::as_i64)
                .filter(|v| (1..=5).contains(v))
                .map(|v| v as u8)
                .ok_or_else(|| {
                    ApiError::new(
                        StatusCode::BAD_REQUEST,
                        "invalid_score",
                        format!("{field} must be an integer from 1 to 5"),
                    )
                })
        };
        let (fluency, engagingness, consistency) = (score("fluency")?, score("engagingness")?, score("consistency")?);
        let chosen_key = match body.get("profile_choice").and_then(Value::as_str) {
            Some("A") => QuizKey::A,
            Some("B") => QuizKey::B,
            _ => return Err(ApiError::invalid_request("profile_choice must be \"A\" or \"B\"")),
        };
        let quiz = s.quiz.as_ref().expect("awaiting rating implies a quiz");
        let correct = chosen_key == quiz.true_key;
        let record = EvaluationRecord {
            session_id: s.id,
            model_id: s.model_id.clone(),
            fluency,
            engagingness,
            consistency,
            chosen_key,
            profile_choice: if correct {
                ProfileChoice::TrueProfile
            } else {
                ProfileChoice::Distractor
            },
            true_first: quiz.true_key == QuizKey::A,
            persona_ids: quiz.personas.clone().map(|p| p.id),
            detection_correct: correct,
            submitted_at: Utc::now(),
        };
        let event = Event::Evaluation { record: record.clone() };
        self.record(&event)?;
        s.apply(&event).map_err(ApiError::internal)?;
        Ok(record)
    }

    /// Full session state, persona included, for persistence checks.
    pub async fn snapshot(&self) -> BTreeMap<Uuid, Session> {
        let cells: Vec<Arc<Mutex<Session>>> = self
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect();
        let mut out = BTreeMap::new();
        for c in cells {
            let s = c.lock().await.clone();
            out.insert(s.id, s);
        }
        out
    }

    pub async fn stats(&self) -> Stats {
        let sessions = self.snapshot().await;
        let records: Vec<&EvaluationRecord> = sessions.values().filter_map(|s| s.evaluation.as_ref()).collect();
        let mut per_model: BTreeMap<String, Vec<&EvaluationRecord>> = BTreeMap::new();
        for r in &records {
            per_model.entry(r.model_id.clone()).or_default().push(r);
        }
        Stats {
            n_sessions: sessions.len(),
            overall: Aggregate::from_records(records.iter().copied()),
            models: per_model
                .into_iter()
                .map(|(k, v)| (k, Aggregate::from_records(v)))
                .collect(),
        }
    }
}
