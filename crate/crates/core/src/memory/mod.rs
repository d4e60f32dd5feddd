//! Durable memory: decision traces, guidance snippets and preferences.

pub mod guidance;
pub mod preferences;
pub mod trace;

use thiserror::Error;

pub use guidance::{
    retrieve_guidance, GuidanceStore, JaccardScorer, RelevanceScorer, Snippet, SnippetSource,
};
pub use preferences::{record_preference_change, revoke_topic, PreferenceSet};
pub use trace::{
    counts_for, CheckInReason, DecisionRecord, EventContext, Origin, PreferenceDelta, TraceBody,
    TraceEvent, TraceStore,
};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("event at {timestamp} in session `{session}` is not after {last}")]
    OutOfOrderEvent {
        session: String,
        timestamp: u64,
        last: u64,
    },
    #[error("trace line {line} is corrupt: {reason}")]
    CorruptTrace { line: usize, reason: String },
    #[error("guidance line {line} is corrupt: {reason}")]
    CorruptGuidance { line: usize, reason: String },
    #[error("guidance text is empty")]
    EmptySnippet,
    #[error(transparent)]
    UnknownTopic(#[from] crate::types::UnknownTopic),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
