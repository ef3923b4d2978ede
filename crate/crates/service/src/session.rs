//! Session state, the events that change it, and rating aggregates.
//!
//! Live requests and log replay go through the same [`Session::apply`], so
//! a restarted service rebuilds exactly the state it had.

use chrono::{DateTime, Utc};
use personachat::corpus::Persona;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// Soft per-message word limit from the collection guidelines.
pub const MAX_REPLY_WORDS: usize = 15;

pub fn over_length(text: &str) -> bool {
    text.split_whitespace().count() > MAX_REPLY_WORDS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Chatting,
    AwaitingRating,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Human,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Role,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    pub over_length: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuizKey {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileChoice {
    TrueProfile,
    Distractor,
}

/// The two personas shown to the rater, in display order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quiz {
    pub personas: [Persona; 2],
    pub true_key: QuizKey,
}

impl Quiz {
    pub fn key_index(key: QuizKey) -> usize {
        match key {
            QuizKey::A => 0,
            QuizKey::B => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub session_id: Uuid,
    pub model_id: String,
    pub fluency: u8,
    pub engagingness: u8,
    pub consistency: u8,
    pub chosen_key: QuizKey,
    pub profile_choice: ProfileChoice,
    /// Quiz order bit: whether the true persona was shown as A.
    pub true_first: bool,
    /// Persona ids in display order.
    pub persona_ids: [String; 2],
    pub detection_correct: bool,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        session_id: Uuid,
        model_id: String,
        persona: Persona,
        seed: Option<u64>,
        quiz_seed: u64,
        at: DateTime<Utc>,
    },
    Message {
        session_id: Uuid,
        human: String,
        human_at: DateTime<Utc>,
        reply: String,
        reply_at: DateTime<Utc>,
    },
    QuizIssued {
        session_id: Uuid,
        quiz: Quiz,
        at: DateTime<Utc>,
    },
    Evaluation {
        record: EvaluationRecord,
    },
}

impl Event {
    pub fn session_id(&self) -> Uuid {
        match self {
            Event::SessionCreated { session_id, .. }
            | Event::Message { session_id, .. }
            | Event::QuizIssued { session_id, .. } => *session_id,
            Event::Evaluation { record } => record.session_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: Uuid,
    pub model_id: String,
    pub persona: Persona,
    pub seed: Option<u64>,
    pub quiz_seed: u64,
    pub created: DateTime<Utc>,
    pub state: SessionState,
    pub transcript: Vec<Message>,
    pub quiz: Option<Quiz>,
    pub evaluation: Option<EvaluationRecord>,
}

impl Session {
    /// Starts a session from its creation event.
    pub fn create(event: &Event) -> Option<Session> {
        let Event::SessionCreated {
            session_id,
            model_id,
            persona,
            seed,
            quiz_seed,
            at,
        } = event
        else {
            return None;
        };
        Some(Session {
            id: *session_id,
            model_id: model_id.clone(),
            persona: persona.clone(),
            seed: *seed,
            quiz_seed: *quiz_seed,
            created: *at,
            state: SessionState::Chatting,
            transcript: Vec::new(),
            quiz: None,
            evaluation: None,
        })
    }

    pub fn human_turns(&self) -> usize {
        self.transcript.iter().filter(|m| m.speaker == Role::Human).count()
    }

    pub fn texts(&self) -> Vec<String> {
        self.transcript.iter().map(|m| m.text.clone()).collect()
    }

    /// Applies a follow-up event, rejecting any that the state machine does
    /// not allow at this point.
    pub fn apply(&mut self, event: &Event) -> Result<(), String> {
        if event.session_id() != self.id {
            return Err("event belongs to another session".into());
        }
        match (event, self.state) {
            (
                Event::Message {
                    human,
                    human_at,
                    reply,
                    reply_at,
                    ..
                },
                SessionState::Chatting,
            ) => {
                self.transcript.push(Message {
                    speaker: Role::Human,
                    text: human.clone(),
                    timestamp: *human_at,
                    over_length: false,
                });
                self.transcript.push(Message {
                    speaker: Role::Model,
                    text: reply.clone(),
                    timestamp: *reply_at,
                    over_length: over_length(reply),
                });
            }
            (Event::QuizIssued { quiz, .. }, SessionState::Chatting) => {
                self.quiz = Some(quiz.clone());
                self.state = SessionState::AwaitingRating;
            }
            (Event::Evaluation { record }, SessionState::AwaitingRating) => {
                self.evaluation = Some(record.clone());
                self.state = SessionState::Closed;
            }
            (e, s) => return Err(format!("{} not allowed while {s:?}", event_name(e))),
        }
        Ok(())
    }
}

fn event_name(e: &Event) -> &'static str {
    match e {
        Event::SessionCreated { .. } => "session_created",
        Event::Message { .. } => "message",
        Event::QuizIssued { .. } => "quiz_issued",
        Event::Evaluation { .. } => "evaluation",
    }
}

/// Means of the three ratings and the persona detection rate.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub n_evaluations: usize,
    pub fluency: Option<f64>,
    pub engagingness: Option<f64>,
    pub consistency: Option<f64>,
    pub detection_rate: Option<f64>,
}

impl Aggregate {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a EvaluationRecord>) -> Self {
        let records: Vec<&EvaluationRecord> = records.into_iter().collect();
        let n = records.len();
        if n == 0 {
            return Aggregate::default();
        }
        let mean = |f: fn(&EvaluationRecord) -> f64| Some(records.iter().map(|r| f(r)).sum::<f64>() / n as f64);
        Aggregate {
            n_evaluations: n,
            fluency: mean(|r| f64::from(r.fluency)),
            engagingness: mean(|r| f64::from(r.engagingness)),
            consistency: mean(|r| f64::from(r.consistency)),
            detection_rate: mean(|r| if r.detection_correct { 1.0 } else { 0.0 }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use personachat::corpus::Variant;

    fn persona(id: &str) -> Persona {
        Persona {
            id: id.into(),
            variant: Variant::Original,
            sentences: vec![format!("i am {id} .")],
        }
    }

    fn created() -> (Session, Uuid) {
        let id = Uuid::new_v4();
        let s = Session::create(&Event::SessionCreated {
            session_id: id,
            model_id: "m".into(),
            persona: persona("p"),
            seed: Some(1),
            quiz_seed: 2,
            at: Utc::now(),
        })
        .unwrap();
        (s, id)
    }

    fn record(id: Uuid, correct: bool, scores: (u8, u8, u8)) -> EvaluationRecord {
        EvaluationRecord {
            session_id: id,
            model_id: "m".into(),
            fluency: scores.0,
            engagingness: scores.1,
            consistency: scores.2,
            chosen_key: QuizKey::A,
            profile_choice: if correct { ProfileChoice::TrueProfile } else { ProfileChoice::Distractor },
            true_first: correct,
            persona_ids: ["p".into(), "q".into()],
            detection_correct: correct,
            submitted_at: Utc::now(),
        }
    }

    #[test]
    fn word_limit_is_soft_at_fifteen() {
        assert!(!over_length(&"w ".repeat(15)));
        assert!(over_length(&"w ".repeat(16)));
    }

    #[test]
    fn state_only_moves_forward() {
        let (mut s, id) = created();
        let now = Utc::now();
        let msg = Event::Message {
            session_id: id,
            human: "hi".into(),
            human_at: now,
            reply: "hello".into(),
            reply_at: now,
        };
        let quiz = Event::QuizIssued {
            session_id: id,
            quiz: Quiz {
                personas: [persona("p"), persona("q")],
                true_key: QuizKey::A,
            },
            at: now,
        };
        let eval = Event::Evaluation {
            record: record(id, true, (4, 4, 3)),
        };
        assert!(s.apply(&eval).is_err());
        s.apply(&msg).unwrap();
        assert_eq!(s.transcript.len(), 2);
        assert_eq!(s.transcript[0].speaker, Role::Human);
        assert_eq!(s.transcript[1].speaker, Role::Model);
        s.apply(&quiz).unwrap();
        assert!(s.apply(&msg).is_err());
        assert!(s.apply(&quiz).is_err());
        s.apply(&eval).unwrap();
        assert_eq!(s.state, SessionState::Closed);
        assert!(s.apply(&eval).is_err());
    }

    #[test]
    fn events_round_trip_as_json_lines() {
        let (_, id) = created();
        let e = Event::Evaluation {
            record: record(id, false, (1, 2, 3)),
        };
        let line = serde_json::to_string(&e).unwrap();
        assert!(line.starts_with("{\"event\":\"evaluation\""));
        assert_eq!(serde_json::from_str::<Event>(&line).unwrap(), e);
    }

    #[test]
    fn detection_rate_over_ten_records() {
        let id = Uuid::new_v4();
        let records: Vec<_> = (0..10).map(|i| record(id, i < 8, (4, 3, (i % 5 + 1) as u8))).collect();
        let agg = Aggregate::from_records(&records);
        assert_eq!(agg.n_evaluations, 10);
        assert_eq!(agg.detection_rate, Some(0.8));
        assert_eq!(agg.fluency, Some(4.0));
        assert_eq!(agg.consistency, Some(3.0));
        assert_eq!(Aggregate::from_records(&[]).detection_rate, None);
    }
}
