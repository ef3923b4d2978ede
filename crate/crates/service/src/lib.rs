//! Live chat sessions against trained persona models, with the rating
//! questionnaire and profile-detection quiz used for human evaluation.
//!
//! Every state change is appended to a JSONL event log before it takes
//! effect, and startup replays that log.

pub mod api;
pub mod app;
pub mod config;
pub mod eventlog;
pub mod models;
pub mod session;

pub use api::{router, serve};
pub use app::{ApiError, AppState, ChatModel, StartupError};
pub use config::{ModelEntry, ServiceConfig};
pub use models::{load_model, side_path, ModelType};
