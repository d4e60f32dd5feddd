//! The bundled two-session demo: a 14-decision seed, two scripted agent
//! runs and the developer answers for each.

use serde::Deserialize;

use super::personas::{seed_decisions, Scenario};
use super::EvalError;
use crate::memory::{EventContext, Origin};
use crate::rules::{compile_rule, confirm_and_persist};
use crate::session::{
    run_session, AgentScript, ScriptedAgentAdapter, ScriptedResponder, SessionEnv, SessionSummary,
};
use crate::workspace::{Config, Stores};

pub const SEED: &str = include_str!("../../fixtures/walkthrough/seed.json");
pub const SESSION1: &str = include_str!("../../fixtures/walkthrough/session1.json");
pub const SESSION1_ANSWERS: &str = include_str!("../../fixtures/walkthrough/session1_answers.json");
pub const SESSION2: &str = include_str!("../../fixtures/walkthrough/session2.json");
pub const SESSION2_ANSWERS: &str = include_str!("../../fixtures/walkthrough/session2_answers.json");

/// The two rules the developer adds before the first session.
pub const RULES: [&str; 2] = [
    "never write to files under config/prod/",
    "for routine backend changes, reuse existing validation helpers and avoid creating new files unless clearly necessary",
];

/// Verification command used by the demo sessions.
pub const VERIFICATION_COMMAND: &str = "true";

#[derive(Debug, Clone, Deserialize)]
pub struct SeedDecision {
    #[serde(flatten)]
    pub scenario: Scenario,
    pub approved: bool,
}

pub fn seed_fixture(text: &str) -> Result<Vec<(Scenario, bool)>, EvalError> {
    let rows: Vec<SeedDecision> =
        serde_json::from_str(text).map_err(|e| EvalError::Fixture(e.to_string()))?;
    Ok(rows.into_iter().map(|r| (r.scenario, r.approved)).collect())
}

/// Appends the bundled seed decisions once, as seed events.
pub fn seed_walkthrough(stores: &mut Stores, repo_id: &str) -> Result<usize, EvalError> {
    let rows = seed_fixture(SEED)?;
    seed_decisions(stores, &rows, 1, "walkthrough-seed", repo_id)?;
    Ok(rows.len())
}

pub fn walkthrough_config() -> Config {
    Config {
        verification_command: Some(VERIFICATION_COMMAND.to_string()),
        ..Config::default()
    }
}

/// Runs one scripted session with scripted answers.
pub fn run_scripted(
    session_id: &str,
    script: &str,
    answers: &str,
    stores: &mut Stores,
    config: &Config,
    repo_id: &str,
    out: &mut dyn std::io::Write,
) -> Result<(SessionSummary, ScriptedAgentAdapter), EvalError> {
    let script = AgentScript::from_json(script).map_err(|e| EvalError::Fixture(e.to_string()))?;
    let task = script.task.clone();
    let mut adapter = ScriptedAgentAdapter::new(script);
    let mut responder =
        ScriptedResponder::from_json(answers).map_err(|e| EvalError::Fixture(e.to_string()))?;
    let workdir = std::env::temp_dir();
    let env = SessionEnv {
        session_id: session_id.to_string(),
        repo_id: repo_id.to_string(),
        workdir: &workdir,
        origin: Origin::Live,
        spec_digest: None,
    };
    let summary = run_session(
        &task,
        &mut adapter,
        &mut responder,
        stores,
        config,
        &env,
        out,
    )?;
    Ok((summary, adapter))
}

/// Compiles and persists [`RULES`] as if confirmed at the prompt.
pub fn add_rules(stores: &mut Stores, repo_id: &str) -> Result<(), EvalError> {
    let ctx = EventContext::live("walkthrough-rules", repo_id);
    for text in RULES {
        let interp = compile_rule(text).map_err(|e| EvalError::Fixture(e.to_string()))?;
        confirm_and_persist(
            &interp,
            true,
            &mut stores.rules,
            &mut stores.guidance,
            &mut stores.trace,
            &ctx,
        )
        .map_err(|e| EvalError::Fixture(e.to_string()))?;
    }
    Ok(())
}

/// Seeds, adds the rules and runs both sessions against `stores`.
pub fn run_walkthrough(
    stores: &mut Stores,
    repo_id: &str,
    out: &mut dyn std::io::Write,
) -> Result<[SessionSummary; 2], EvalError> {
    seed_walkthrough(stores, repo_id)?;
    add_rules(stores, repo_id)?;
    let config = walkthrough_config();
    let (s1, _) = run_scripted(
        "session-1",
        SESSION1,
        SESSION1_ANSWERS,
        stores,
        &config,
        repo_id,
        out,
    )?;
    let (s2, _) = run_scripted(
        "session-2",
        SESSION2,
        SESSION2_ANSWERS,
        stores,
        &config,
        repo_id,
        out,
    )?;
    Ok([s1, s2])
}
