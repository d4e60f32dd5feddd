//! Fixture-task replay and scoring against oracle labels.

use serde::{Deserialize, Serialize};

use super::personas::{seed_repo, PersonaName, PersonaProfile};
use super::EvalError;
use crate::governance::Route;
use crate::memory::Origin;
use crate::session::{
    run_session, AgentScript, AgentStep, AutoApprove, ScriptedAgentAdapter, SessionEnv,
};
use crate::types::{ActionProposal, Initiator};
use crate::workspace::{Config, Stores};

pub const DEFAULT_FIXTURE: &str = include_str!("../../fixtures/eval_tasks.json");
pub const OPERATION_COUNT: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Required {
    pub cautious: bool,
    pub permissive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Operation {
    pub proposal: ActionProposal,
    pub required: Required,
    /// Which governance mechanism the operation exercises.
    #[serde(default)]
    pub mechanism: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureTask {
    pub id: String,
    pub description: String,
    pub operations: Vec<Operation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFixture {
    pub version: u32,
    pub tasks: Vec<FixtureTask>,
}

impl EvalFixture {
    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let f: EvalFixture =
            serde_json::from_str(text).map_err(|e| EvalError::Fixture(e.to_string()))?;
        for op in f.operations() {
            crate::types::validate_proposal(&op.proposal)
                .map_err(|e| EvalError::Fixture(e.to_string()))?;
        }
        Ok(f)
    }

    pub fn default_fixture() -> Self {
        Self::from_json(DEFAULT_FIXTURE).expect("bundled fixture is valid")
    }

    pub fn operations(&self) -> impl Iterator<Item = &Operation> {
        self.tasks.iter().flat_map(|t| t.operations.iter())
    }

    pub fn oracle(&self, persona: PersonaName) -> OracleLabelSet {
        OracleLabelSet {
            required: self
                .operations()
                .map(|op| match persona {
                    PersonaName::Cautious => op.required.cautious,
                    PersonaName::Permissive | PersonaName::Mixed => op.required.permissive,
                })
                .collect(),
        }
    }
}

/// Per-operation "must check in" labels, in fixture order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleLabelSet {
    pub required: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperationRoute {
    pub task: String,
    pub proposal_id: u64,
    pub route: Route,
    pub initiator: Initiator,
}

/// Runs every fixture task as its own session with an approving responder.
pub fn replay_fixture_tasks(
    fixture: &EvalFixture,
    stores: &mut Stores,
    config: &Config,
    repo_id: &str,
) -> Result<Vec<OperationRoute>, EvalError> {
    let mut routes = Vec::new();
    let workdir = std::env::temp_dir();
    for task in &fixture.tasks {
        let steps = task
            .operations
            .iter()
            .map(|op| AgentStep::Propose {
                proposal: op.proposal.clone(),
            })
            .collect();
        let mut adapter = ScriptedAgentAdapter::new(AgentScript {
            task: task.description.clone(),
            steps,
        });
        let env = SessionEnv {
            session_id: format!("eval-{}", task.id),
            repo_id: repo_id.to_string(),
            workdir: &workdir,
            origin: Origin::Live,
            spec_digest: None,
        };
        let summary = run_session(
            &task.description,
            &mut adapter,
            &mut AutoApprove,
            stores,
            config,
            &env,
            &mut std::io::sink(),
        )?;
        routes.extend(summary.actions.iter().map(|a| OperationRoute {
            task: task.id.clone(),
            proposal_id: a.proposal_id,
            route: a.route,
            initiator: a.route.initiator(),
        }));
    }
    Ok(routes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleScore {
    pub checkins: usize,
    pub ratio: f64,
    /// `None` when the oracle requires nothing.
    pub recall: Option<f64>,
    /// `None` when nothing was checked in.
    pub precision: Option<f64>,
    pub caught: usize,
    pub required: usize,
}

pub fn score_against_oracle(
    routes: &[Route],
    oracle: &OracleLabelSet,
) -> Result<OracleScore, EvalError> {
    if routes.len() != oracle.required.len() {
        return Err(EvalError::LengthMismatch {
            routes: routes.len(),
            labels: oracle.required.len(),
        });
    }
    let checked: Vec<bool> = routes.iter().map(|r| *r == Route::LiveCheckIn).collect();
    let checkins = checked.iter().filter(|c| **c).count();
    let required = oracle.required.iter().filter(|r| **r).count();
    let caught = checked
        .iter()
        .zip(&oracle.required)
        .filter(|(c, r)| **c && **r)
        .count();
    let ratio = if routes.is_empty() {
        0.0
    } else {
        checkins as f64 / routes.len() as f64
    };
    Ok(OracleScore {
        checkins,
        ratio,
        recall: (required > 0).then(|| caught as f64 / required as f64),
        precision: (checkins > 0).then(|| caught as f64 / checkins as f64),
        caught,
        required,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub persona: PersonaName,
    pub routes: Vec<OperationRoute>,
    pub score: OracleScore,
}

/// Seeds a fresh repository with `persona` and replays the fixture.
pub fn table1_row(
    persona: PersonaName,
    seed: u64,
    fixture: &EvalFixture,
) -> Result<Table1Row, EvalError> {
    let repo = format!("eval-{}", persona.as_str());
    let mut stores = Stores::in_memory(&repo);
    seed_repo(&PersonaProfile::new(persona), seed, &mut stores, &repo)?;
    let routes = replay_fixture_tasks(fixture, &mut stores, &Config::default(), &repo)?;
    let plain: Vec<Route> = routes.iter().map(|r| r.route).collect();
    let score = score_against_oracle(&plain, &fixture.oracle(persona))?;
    Ok(Table1Row {
        persona,
        routes,
        score,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "---".to_string(), |v| format!("{v:.2}"))
}

pub fn render_table1(rows: &[Table1Row]) -> String {
    let mut out = format!(
        "{:<12} {:>4} {:>6} {:>7} {:>10}\n",
        "persona", "chk", "ratio", "recall", "precision"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:>4} {:>6.2} {:>7} {:>10}\n",
            r.persona.as_str(),
            r.score.checkins,
            r.score.ratio,
            fmt_opt(r.score.recall),
            fmt_opt(r.score.precision)
        ));
    }
    out
}
