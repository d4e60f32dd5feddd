//! One governed session: the agent proposes, governance routes, the
//! developer answers live check-ins, and every outcome lands in the trace.

pub mod adapter;
pub mod checkin;
pub mod verify;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub use adapter::{
    parse_agent_reply, AgentAdapter, AgentCheckInRequest, AgentScript, AgentStep, Feedback,
    PromptContext, RemoteAgentAdapter, ScriptedAgentAdapter,
};
pub use checkin::{
    conduct_checkin, Answer, AutoApprove, CheckInPrompt, Responder, ScriptedResponder,
    TerminalResponder,
};
pub use verify::{run_verification, VerificationOutcome};

use crate::governance::{evaluate, CascadeOutcome, GovernanceContext, Route, Tier};
use crate::memory::{
    CheckInReason, DecisionRecord, EventContext, MemoryError, Origin, SnippetSource, TraceBody,
};
use crate::policy::{sgd_update, SessionStats, SimilarityKey};
use crate::types::{
    validate_proposal, ActionKind, ActionProposal, ChangeCategory, Decision, Initiator, Phase,
    Verdict,
};
use crate::workspace::{Config, Stores};

/// Denied proposals may be re-proposed this many times under the same id.
pub const MAX_RETRIES: u32 = 3;
const MAX_STEPS: usize = 10_000;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("remote agent: {0}")]
    Remote(String),
    #[error("unparsable agent reply: {0}")]
    Parse(String),
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("agent adapter failed: {0}")]
    AdapterFailure(String),
    #[error("verification is required but no verification_command is configured")]
    VerificationCommandMissing,
    #[error("verification command not found: {0}")]
    CommandNotFound(String),
    #[error("developer input ended")]
    EndOfInput,
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<AdapterError> for SessionError {
    fn from(e: AdapterError) -> Self {
        SessionError::AdapterFailure(e.to_string())
    }
}

/// Where a session runs and how its events are attributed.
#[derive(Debug, Clone)]
pub struct SessionEnv<'a> {
    pub session_id: String,
    pub repo_id: String,
    pub workdir: &'a Path,
    pub origin: Origin,
    pub spec_digest: Option<String>,
}

/// How one proposal was handled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutedAction {
    pub proposal_id: u64,
    pub action_kind: ActionKind,
    pub route: Route,
    pub tier: Tier,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub policy_initiated_checkins: u32,
    pub agent_initiated_checkins: u32,
    pub silent_approvals: u32,
    pub flagged_items: Vec<String>,
    pub blocked: u32,
    pub executed: u32,
    pub verification_results: Vec<bool>,
    pub decisions: Vec<Decision>,
    pub actions: Vec<RoutedAction>,
    /// False when the session stopped before the agent finished.
    pub complete: bool,
}

impl SessionSummary {
    pub fn verification_passed(&self) -> bool {
        self.verification_results.iter().all(|ok| *ok)
    }

    pub fn render(&self) -> String {
        let mut out = format!("Session {} summary", self.session_id);
        if !self.complete {
            out.push_str(" (incomplete)");
        }
        out.push('\n');
        out.push_str(&format!(
            "Check-ins: {} policy-initiated, {} agent-initiated\n",
            self.policy_initiated_checkins, self.agent_initiated_checkins
        ));
        out.push_str(&format!("Silent approvals: {}\n", self.silent_approvals));
        out.push_str(&format!(
            "Flagged approvals: {}\n",
            self.flagged_items.len()
        ));
        for f in &self.flagged_items {
            out.push_str(&format!("  ! {f}\n"));
        }
        if self.blocked > 0 {
            out.push_str(&format!("Blocked: {}\n", self.blocked));
        }
        let passed = self.verification_results.iter().filter(|ok| **ok).count();
        out.push_str(&format!(
            "Verification: {passed}/{} passed\n",
            self.verification_results.len()
        ));
        out
    }
}

fn describe_action(p: &ActionProposal) -> String {
    if p.paths.is_empty() {
        format!("{} ({})", p.action_kind, p.change_category)
    } else {
        format!(
            "{} {} ({})",
            p.action_kind,
            p.paths.join(", "),
            p.change_category
        )
    }
}

struct Run<'s, 'e> {
    stores: &'s mut Stores,
    config: &'s Config,
    env: &'s SessionEnv<'e>,
    ctx: EventContext,
    out: &'s mut dyn Write,
    summary: SessionSummary,
    stats: SessionStats,
    phase: Phase,
    approved_plan: Option<String>,
    denials: HashMap<u64, u32>,
}

impl Run<'_, '_> {
    fn prompt_context(&self, task: &str) -> PromptContext {
        let guidance = self
            .stores
            .guidance
            .retrieve(task, self.config.retrieval_k.max(1))
            .into_iter()
            .map(|s| s.text.clone())
            .collect();
        PromptContext {
            task: task.to_string(),
            spec_digest: self.env.spec_digest.clone(),
            guidance,
            phase: self.phase,
            approved_plan: self.approved_plan.clone(),
        }
    }

    fn record_decision(
        &mut self,
        p: Option<&ActionProposal>,
        verdict: Verdict,
        initiator: Initiator,
        outcome: Option<&CascadeOutcome>,
        developer_text: Option<String>,
        reason: Option<CheckInReason>,
    ) -> Result<Decision, SessionError> {
        let decision = Decision {
            proposal_id: p.map_or(0, |p| p.id),
            verdict,
            initiator,
            score: outcome.and_then(|o| o.score),
            timestamp: self.stores.trace.next_timestamp(),
        };
        let record = DecisionRecord {
            decision: decision.clone(),
            action_kind: p.map_or(ActionKind::CheckIn, |p| p.action_kind),
            paths: p.map(|p| p.paths.clone()).unwrap_or_default(),
            change_category: p.map_or(ChangeCategory::General, |p| p.change_category),
            phase: p.map_or(self.phase, |p| p.phase),
            key: outcome.map_or_else(
                || SimilarityKey::for_paths(ChangeCategory::General, &[]),
                |o| o.key.clone(),
            ),
            route: outcome.map(|o| o.route),
            tier: outcome.map(|o| o.tier),
            // Only live check-ins train the classifier.
            features: outcome
                .filter(|o| o.route == Route::LiveCheckIn)
                .map(|o| o.features),
            developer_text,
            reason,
        };
        self.stores
            .trace
            .record(&self.ctx, TraceBody::DecisionMade(record))?;
        self.summary.decisions.push(decision.clone());
        Ok(decision)
    }

    fn store_correction(&mut self, proposal_id: u64, text: &str) -> Result<(), SessionError> {
        let snippet_id = self
            .stores
            .guidance
            .add(text, SnippetSource::Correction { proposal_id })?;
        self.stores.trace.record(
            &self.ctx,
            TraceBody::CorrectionGiven {
                proposal_id,
                text: text.to_string(),
            },
        )?;
        self.stores.trace.record(
            &self.ctx,
            TraceBody::GuidanceGiven {
                snippet_id,
                text: text.to_string(),
            },
        )?;
        Ok(())
    }

    fn verify(&mut self) -> Result<(), SessionError> {
        let Some(cmd) = self.config.verification_command.clone() else {
            return Ok(());
        };
        let result = run_verification(&cmd, self.env.workdir)?;
        writeln!(
            self.out,
            "  verification `{cmd}`: {}",
            if result.passed { "pass" } else { "FAIL" }
        )?;
        self.stores.trace.record(
            &self.ctx,
            TraceBody::VerificationRun {
                command: cmd,
                passed: result.passed,
                details: result.details,
            },
        )?;
        self.summary.verification_results.push(result.passed);
        Ok(())
    }

    fn execute(&mut self, p: &ActionProposal) -> Result<(), SessionError> {
        self.summary.executed += 1;
        match p.action_kind {
            ActionKind::Plan => {
                let plan = if p.rationale.is_empty() {
                    format!("change {}", p.paths.join(", "))
                } else {
                    p.rationale.clone()
                };
                self.approved_plan = Some(plan);
            }
            ActionKind::Apply => self.verify()?,
            _ => {}
        }
        Ok(())
    }

    fn route(&self, p: &ActionProposal) -> CascadeOutcome {
        let grants = self.stores.trace.grants(&self.env.session_id);
        let constraints = self.stores.rules.constraints();
        let thresholds = self.config.thresholds();
        let ctx = GovernanceContext {
            constraints: &constraints,
            preferences: &self.stores.preferences,
            state: &self.stores.state,
            thresholds: &thresholds,
            history: &self.stores.trace,
            session: &self.stats,
            grants: &grants,
        };
        let mut outcome = evaluate(p, &ctx);
        if outcome.route == Route::Blocked {
            return outcome;
        }
        if self.denials.get(&p.id).copied().unwrap_or(0) > MAX_RETRIES {
            outcome.route = Route::Blocked;
            outcome.initiator = Initiator::PolicyInitiated;
            outcome.tier = Tier::RetryLimit;
            outcome.explanation = format!(
                "{}: proposal {} was denied {} times",
                Tier::RetryLimit.label(),
                p.id,
                self.denials[&p.id]
            );
        } else if p.phase < self.phase {
            outcome.route = Route::LiveCheckIn;
            outcome.initiator = Initiator::PolicyInitiated;
            outcome.tier = Tier::PhaseRegression;
            outcome.explanation = format!(
                "{}: proposal returns to {} after the session reached {}",
                Tier::PhaseRegression.label(),
                p.phase,
                self.phase
            );
        }
        outcome
    }

    fn handle_proposal(
        &mut self,
        p: ActionProposal,
        adapter: &mut dyn AgentAdapter,
        responder: &mut dyn Responder,
    ) -> Result<(), SessionError> {
        validate_proposal(&p).map_err(|e| SessionError::AdapterFailure(e.to_string()))?;
        let outcome = self.route(&p);
        self.phase = self.phase.max(p.phase);
        let what = describe_action(&p);
        let (verdict, text, executed) = match outcome.route {
            Route::Blocked => {
                writeln!(
                    self.out,
                    "x blocked: {what}\n  why: {}",
                    outcome.explanation
                )?;
                self.record_decision(
                    Some(&p),
                    Verdict::Denied,
                    Initiator::PolicyInitiated,
                    Some(&outcome),
                    None,
                    None,
                )?;
                self.summary.blocked += 1;
                *self.denials.entry(p.id).or_default() += 1;
                adapter.receive_feedback(&Feedback {
                    proposal_id: Some(p.id),
                    verdict: Verdict::Denied,
                    blocked: true,
                    developer_text: None,
                });
                self.push_action(&p, &outcome, Verdict::Denied);
                return Ok(());
            }
            Route::LiveCheckIn => {
                let prompt = CheckInPrompt {
                    title: what.clone(),
                    explanation: outcome.explanation.clone(),
                    options: Vec::new(),
                    rememberable: matches!(p.action_kind, ActionKind::Read | ActionKind::Apply),
                };
                let answer = conduct_checkin(&prompt, responder, self.out)?;
                self.summary.policy_initiated_checkins += 1;
                self.record_decision(
                    Some(&p),
                    answer.verdict,
                    Initiator::PolicyInitiated,
                    Some(&outcome),
                    answer.text.clone(),
                    None,
                )?;
                self.stores.state = sgd_update(
                    &self.stores.state,
                    &outcome.features,
                    answer.verdict.label(),
                );
                self.stats.record(answer.verdict.is_approval());
                if answer.verdict == Verdict::CorrectedThenApproved {
                    if let Some(t) = &answer.text {
                        self.store_correction(p.id, t)?;
                    }
                }
                if !answer.verdict.is_approval() {
                    *self.denials.entry(p.id).or_default() += 1;
                }
                (answer.verdict, answer.text, answer.verdict.is_approval())
            }
            Route::FlaggedApprove => {
                writeln!(self.out, "! flagged: {what}")?;
                self.summary
                    .flagged_items
                    .push(format!("{what}: {}", outcome.explanation));
                self.record_decision(
                    Some(&p),
                    Verdict::Approved,
                    Initiator::FlaggedAuto,
                    Some(&outcome),
                    None,
                    None,
                )?;
                (Verdict::Approved, None, true)
            }
            Route::SilentApprove => {
                if outcome.tier == Tier::RememberedGrant {
                    writeln!(self.out, "- {what}\n  {}", outcome.explanation)?;
                } else {
                    writeln!(self.out, "- {what}")?;
                }
                self.summary.silent_approvals += 1;
                self.record_decision(
                    Some(&p),
                    Verdict::Approved,
                    Initiator::SilentAuto,
                    Some(&outcome),
                    None,
                    None,
                )?;
                (Verdict::Approved, None, true)
            }
        };
        self.push_action(&p, &outcome, verdict);
        if executed {
            self.execute(&p)?;
        }
        adapter.receive_feedback(&Feedback {
            proposal_id: Some(p.id),
            verdict,
            blocked: false,
            developer_text: text,
        });
        Ok(())
    }

    fn push_action(&mut self, p: &ActionProposal, outcome: &CascadeOutcome, verdict: Verdict) {
        self.summary.actions.push(RoutedAction {
            proposal_id: p.id,
            action_kind: p.action_kind,
            route: outcome.route,
            tier: outcome.tier,
            verdict,
        });
    }

    fn handle_agent_checkin(
        &mut self,
        req: AgentCheckInRequest,
        adapter: &mut dyn AgentAdapter,
        responder: &mut dyn Responder,
    ) -> Result<(), SessionError> {
        let reason = serde_json::to_value(req.reason)
            .ok()
            .and_then(|v| v.as_str().map(|s| s.replace('_', " ")))
            .unwrap_or_default();
        let prompt = CheckInPrompt {
            title: format!("agent check-in: {}", req.question),
            explanation: format!("the agent paused on its own ({reason})"),
            options: req.options.clone(),
            rememberable: false,
        };
        let answer = conduct_checkin(&prompt, responder, self.out)?;
        self.summary.agent_initiated_checkins += 1;
        let decision = self.record_decision(
            None,
            answer.verdict,
            Initiator::AgentInitiated,
            None,
            answer.text.clone(),
            Some(req.reason),
        )?;
        if answer.verdict == Verdict::CorrectedThenApproved {
            if let Some(t) = &answer.text {
                self.store_correction(decision.proposal_id, t)?;
            }
        }
        adapter.receive_feedback(&Feedback {
            proposal_id: None,
            verdict: answer.verdict,
            blocked: false,
            developer_text: answer.text,
        });
        Ok(())
    }

    fn drive(
        &mut self,
        task: &str,
        adapter: &mut dyn AgentAdapter,
        responder: &mut dyn Responder,
    ) -> Result<(), SessionError> {
        for _ in 0..MAX_STEPS {
            let context = self.prompt_context(task);
            match adapter.next_action(&context)? {
                AgentStep::Propose { proposal } => {
                    self.handle_proposal(proposal, adapter, responder)?
                }
                AgentStep::CheckIn(req) => self.handle_agent_checkin(req, adapter, responder)?,
                AgentStep::Done => {
                    if self.phase >= Phase::Implementation
                        && self.summary.verification_results.is_empty()
                    {
                        self.verify()?;
                    }
                    return Ok(());
                }
            }
        }
        Err(SessionError::AdapterFailure(format!(
            "no Done after {MAX_STEPS} steps"
        )))
    }
}

/// Runs `adapter` to completion against `stores`. The caller persists the
/// updated stores. Running out of developer input ends the session early
/// with `complete = false`.
pub fn run_session(
    task: &str,
    adapter: &mut dyn AgentAdapter,
    responder: &mut dyn Responder,
    stores: &mut Stores,
    config: &Config,
    env: &SessionEnv<'_>,
    out: &mut dyn Write,
) -> Result<SessionSummary, SessionError> {
    if config.require_verification && config.verification_command.is_none() {
        return Err(SessionError::VerificationCommandMissing);
    }
    let mut run = Run {
        stores,
        config,
        env,
        ctx: EventContext {
            session_id: env.session_id.clone(),
            repo_id: env.repo_id.clone(),
            origin: env.origin,
        },
        out,
        summary: SessionSummary {
            session_id: env.session_id.clone(),
            complete: true,
            ..SessionSummary::default()
        },
        stats: SessionStats::default(),
        phase: Phase::Research,
        approved_plan: None,
        denials: HashMap::new(),
    };
    match run.drive(task, adapter, responder) {
        Ok(()) => {}
        Err(SessionError::EndOfInput) => {
            run.summary.complete = false;
            writeln!(run.out, "developer input ended; session aborted")?;
        }
        Err(e) => return Err(e),
    }
    Ok(run.summary)
}

/// `s<N>` for the next session not yet present in the trace.
pub fn next_session_id(trace: &crate::memory::TraceStore) -> String {
    let used: std::collections::HashSet<&str> = trace
        .events()
        .iter()
        .map(|e| e.session_id.as_str())
        .collect();
    (1..)
        .map(|n| format!("s{n}"))
        .find(|id| !used.contains(id.as_str()))
        .expect("unbounded range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ChangeCategory;

    fn env(dir: &Path) -> SessionEnv<'_> {
        SessionEnv {
            session_id: "s1".into(),
            repo_id: "repo".into(),
            workdir: dir,
            origin: Origin::Live,
            spec_digest: None,
        }
    }

    fn proposal(
        id: u64,
        kind: ActionKind,
        paths: &[&str],
        cat: ChangeCategory,
        diff: u32,
        phase: Phase,
    ) -> ActionProposal {
        ActionProposal {
            id,
            action_kind: kind,
            paths: paths.iter().map(|s| s.to_string()).collect(),
            change_category: cat,
            diff_lines: diff,
            files_touched: paths.len() as u32,
            model_confidence: 0.8,
            phase,
            rationale: String::new(),
        }
    }

    fn script(steps: Vec<AgentStep>) -> ScriptedAgentAdapter {
        ScriptedAgentAdapter::new(AgentScript {
            task: "t".into(),
            steps,
        })
    }

    fn propose(p: ActionProposal) -> AgentStep {
        AgentStep::Propose { proposal: p }
    }

    #[test]
    fn apply_in_research_hits_the_phase_gate() {
        let dir = tempfile::tempdir().unwrap();
        let mut stores = Stores::in_memory("repo");
        let mut adapter = script(vec![propose(proposal(
            1,
            ActionKind::Apply,
            &["src/a.py"],
            ChangeCategory::General,
            3,
            Phase::Research,
        ))]);
        let mut responder = ScriptedResponder::new(["a"]);
        let s = run_session(
            "t",
            &mut adapter,
            &mut responder,
            &mut stores,
            &Config::default(),
            &env(dir.path()),
            &mut Vec::new(),
        )
        .unwrap();
        assert_eq!(s.actions[0].route, Route::LiveCheckIn);
        assert_eq!(s.actions[0].tier, Tier::PhaseGate);
        assert_eq!(s.policy_initiated_checkins, 1);
        assert_eq!(stores.state.update_count, 1);
    }

    #[test]
    fn agent_checkins_bypass_the_cascade() {
        let dir = tempfile::tempdir().unwrap();
        let mut stores = Stores::in_memory("repo");
        let before = stores.state.clone();
        let mut adapter = script(vec![AgentStep::CheckIn(AgentCheckInRequest {
            reason: CheckInReason::Uncertainty,
            question: "which table?".into(),
            options: vec![],
        })]);
        let mut responder = ScriptedResponder::new(["c use the tasks table"]);
        let s = run_session(
            "t",
            &mut adapter,
            &mut responder,
            &mut stores,
            &Config::default(),
            &env(dir.path()),
            &mut Vec::new(),
        )
        .unwrap();
        assert_eq!(
            (s.policy_initiated_checkins, s.agent_initiated_checkins),
            (0, 1)
        );
        assert_eq!(stores.state, before);
        assert_eq!(stores.guidance.snippets().len(), 1);
    }

    #[test]
    fn exhausted_input_marks_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        let mut stores = Stores::in_memory("repo");
        let mut adapter = script(vec![propose(proposal(
            1,
            ActionKind::Read,
            &["src/a.py"],
            ChangeCategory::General,
            0,
            Phase::Research,
        ))]);
        let s = run_session(
            "t",
            &mut adapter,
            &mut ScriptedResponder::default(),
            &mut stores,
            &Config::default(),
            &env(dir.path()),
            &mut Vec::new(),
        )
        .unwrap();
        assert!(!s.complete);
    }

    #[test]
    fn required_verification_needs_a_command() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Config {
            require_verification: true,
            ..Config::default()
        };
        let err = run_session(
            "t",
            &mut script(vec![]),
            &mut AutoApprove,
            &mut Stores::in_memory("repo"),
            &cfg,
            &env(dir.path()),
            &mut Vec::new(),
        )
        .unwrap_err();
        assert!(matches!(err, SessionError::VerificationCommandMissing));
    }

    #[test]
    fn failed_verification_raises_failure_rate() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Config {
            verification_command: Some("false".into()),
            ..Config::default()
        };
        let mut stores = Stores::in_memory("repo");
        let p = proposal(
            1,
            ActionKind::Apply,
            &["docs/a.md"],
            ChangeCategory::Doc,
            2,
            Phase::Implementation,
        );
        let s = run_session(
            "t",
            &mut script(vec![propose(p.clone())]),
            &mut AutoApprove,
            &mut stores,
            &cfg,
            &env(dir.path()),
            &mut Vec::new(),
        )
        .unwrap();
        assert_eq!(s.verification_results, vec![false]);
        let x = crate::policy::extract_features(&p, &stores.trace, &SessionStats::default());
        assert_eq!(x.get(crate::policy::Feature::VerificationFailureRate), 1.0);
    }

    #[test]
    fn repeated_denials_hit_the_retry_cap() {
        let dir = tempfile::tempdir().unwrap();
        let mut stores = Stores::in_memory("repo");
        let p = proposal(
            9,
            ActionKind::Apply,
            &["src/a.py"],
            ChangeCategory::General,
            3,
            Phase::Research,
        );
        let steps = (0..5).map(|_| propose(p.clone())).collect();
        let mut responder = ScriptedResponder::new(["d", "d", "d", "d"]);
        let s = run_session(
            "t",
            &mut script(steps),
            &mut responder,
            &mut stores,
            &Config::default(),
            &env(dir.path()),
            &mut Vec::new(),
        )
        .unwrap();
        let routes: Vec<Route> = s.actions.iter().map(|a| a.route).collect();
        assert_eq!(routes[..4], [Route::LiveCheckIn; 4]);
        assert_eq!(s.actions[4].tier, Tier::RetryLimit);
        assert_eq!(s.blocked, 1);
    }

    #[test]
    fn phase_regression_checks_in() {
        let dir = tempfile::tempdir().unwrap();
        let mut stores = Stores::in_memory("repo");
        let steps = vec![
            propose(proposal(
                1,
                ActionKind::Apply,
                &["docs/a.md"],
                ChangeCategory::Doc,
                2,
                Phase::Implementation,
            )),
            propose(proposal(
                2,
                ActionKind::Plan,
                &["docs/a.md"],
                ChangeCategory::Doc,
                0,
                Phase::Planning,
            )),
        ];
        let mut responder = ScriptedResponder::new(["a", "a", "a"]);
        let s = run_session(
            "t",
            &mut script(steps),
            &mut responder,
            &mut stores,
            &Config::default(),
            &env(dir.path()),
            &mut Vec::new(),
        )
        .unwrap();
        assert_eq!(s.actions[1].tier, Tier::PhaseRegression);
        assert_eq!(s.actions[1].route, Route::LiveCheckIn);
    }

    #[test]
    fn session_ids_count_up() {
        let mut t = crate::memory::TraceStore::in_memory();
        assert_eq!(next_session_id(&t), "s1");
        t.record(
            &EventContext::live("s1", "r"),
            TraceBody::GuidanceGiven {
                snippet_id: 1,
                text: "x".into(),
            },
        )
        .unwrap();
        assert_eq!(next_session_id(&t), "s2");
    }
}
