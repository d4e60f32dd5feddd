//! Personas, seeding, fixture replay and oracle metrics.

pub mod personas;
pub mod replay;
pub mod walkthrough;

use thiserror::Error;

pub use personas::{
    coefficient_deviation_study, generate_persona_decisions, infer_preferences, render_study,
    seed_decisions, seed_repo, DeviationRow, PersonaName, PersonaProfile, Scenario, SeedOutcome,
};
pub use replay::{
    render_table1, replay_fixture_tasks, score_against_oracle, table1_row, EvalFixture,
    OperationRoute, OracleLabelSet, OracleScore, Table1Row,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown persona `{0}` (expected cautious, permissive or mixed)")]
    UnknownPersona(String),
    #[error("invalid fixture: {0}")]
    Fixture(String),
    #[error("{routes} routes but {labels} oracle labels")]
    LengthMismatch { routes: usize, labels: usize },
    #[error(transparent)]
    Memory(#[from] crate::memory::MemoryError),
    #[error(transparent)]
    Session(#[from] crate::session::SessionError),
}
