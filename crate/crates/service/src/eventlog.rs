//! Append-only JSONL event log.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use crate::session::Event;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Corrupt { path: PathBuf, line: usize, msg: String },
}

/// Single writer for the event log. Each event is one line, flushed and
/// synced before the caller changes any in-memory state.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl EventLog {
    /// Opens (or creates) the log and returns the events already in it.
    /// A final line cut off by a crash is dropped and truncated away so
    /// later appends start on a clean line.
    pub fn open(path: &Path) -> Result<(EventLog, Vec<Event>), LogError> {
        let io_err = |source| LogError::Io {
            path: path.to_owned(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io_err)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io_err)?;

        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        if complete < text.len() {
            log::warn!(
                "{}: dropping incomplete final record ({} bytes)",
                path.display(),
                text.len() - complete
            );
            file.set_len(complete as u64).map_err(io_err)?;
        }
        let mut events = Vec::new();
        for (i, line) in text[..complete].lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(line).map_err(|e| LogError::Corrupt {
                path: path.to_owned(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            events.push(event);
        }
        Ok((
            EventLog {
                path: path.to_owned(),
                file: Mutex::new(file),
            },
            events,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: &Event) -> Result<(), LogError> {
        let mut line = serde_json::to_string(event).expect("events always serialize");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(|source| LogError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{EvaluationRecord, ProfileChoice, QuizKey};
    use chrono::Utc;
    use uuid::Uuid;

    fn event() -> Event {
        Event::Evaluation {
            record: EvaluationRecord {
                session_id: Uuid::new_v4(),
                model_id: "m".into(),
                fluency: 5,
                engagingness: 4,
                consistency: 3,
                chosen_key: QuizKey::B,
                profile_choice: ProfileChoice::TrueProfile,
                true_first: false,
                persona_ids: ["a".into(), "b".into()],
                detection_correct: true,
                submitted_at: Utc::now(),
            },
        }
    }

    #[test]
    fn appended_events_are_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let (log, seen) = EventLog::open(&path).unwrap();
        assert!(seen.is_empty());
        let (a, b) = (event(), event());
        log.append(&a).unwrap();
        log.append(&b).unwrap();
        drop(log);
        assert_eq!(EventLog::open(&path).unwrap().1, vec![a, b]);
    }

    #[test]
    fn torn_tail_is_dropped_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let a = event();
        let mut text = serde_json::to_string(&a).unwrap();
        text.push_str("\n{\"event\":\"evalu");
        std::fs::write(&path, text).unwrap();
        let (log, seen) = EventLog::open(&path).unwrap();
        assert_eq!(seen, vec![a.clone()]);
        let b = event();
        log.append(&b).unwrap();
        drop(log);
        assert_eq!(EventLog::open(&path).unwrap().1, vec![a, b]);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(EventLog::open(&path), Err(LogError::Corrupt { line: 1, .. })));
    }
}
