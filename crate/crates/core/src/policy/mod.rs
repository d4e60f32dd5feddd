//! The learned check-in policy: features, scoring, online updates,
//! warm-start and per-repository persistence.

pub mod classifier;
pub mod features;
pub mod persist;
pub mod warm_start;

use thiserror::Error;

pub use classifier::{score, sgd_update, sigmoid, weight_deltas, PolicyState, WeightDelta};
pub use features::{
    extract_features, is_security_sensitive, Feature, FeatureVector, RawSignals, SessionStats,
    SimilarityKey, TraceStoreView,
};
pub use persist::{load, persist, POLICY_FILE};
pub use warm_start::{default_state, warm_start, EngineeringPriorSet, PriorRule, DEFAULT_SEED};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("engineering prior set is empty")]
    EmptyPriors,
    #[error("no policy state found")]
    NotFound,
    #[error("corrupt policy state: {0}")]
    CorruptState(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
