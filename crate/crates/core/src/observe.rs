//! Read-only views of preferences, learned weights and the governance report.

use serde::Serialize;

use crate::governance::{Mode, Route, Thresholds};
use crate::memory::{EventContext, MemoryError, Origin, PreferenceSet, TraceBody, TraceStore};
use crate::policy::{weight_deltas, PolicyState, WeightDelta};
use crate::types::{AutonomyPreference, ChangeCategory, Initiator};

pub const MACHINE_VERSION: u32 = 1;

/// Versioned envelope for `--format machine`.
#[derive(Debug, Serialize)]
pub struct Machine<'a, T: Serialize> {
    pub schema: &'static str,
    pub version: u32,
    pub data: &'a T,
}

pub fn to_machine<T: Serialize>(schema: &'static str, data: &T) -> String {
    serde_json::to_string_pretty(&Machine {
        schema,
        version: MACHINE_VERSION,
        data,
    })
    .expect("views serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreferencesView {
    pub active: Vec<AutonomyPreference>,
    pub revoked_topics: Vec<ChangeCategory>,
    pub proceed_threshold: f64,
    pub flag_threshold: f64,
    pub mode: Mode,
}

pub fn show_preferences(prefs: &PreferenceSet, thresholds: &Thresholds) -> PreferencesView {
    PreferencesView {
        active: prefs.active.iter().filter(|p| p.active).cloned().collect(),
        revoked_topics: prefs.revoked_topics.iter().copied().collect(),
        proceed_threshold: thresholds.proceed,
        flag_threshold: thresholds.flag,
        mode: thresholds.mode,
    }
}

impl PreferencesView {
    pub fn render(&self) -> String {
        let mut out = String::from("Autonomy preferences\n");
        if self.active.is_empty() {
            out.push_str("  (none)\n");
        }
        for p in &self.active {
            let scope = if p.scope_topics.is_empty() {
                "all topics".to_string()
            } else {
                p.scope_topics
                    .iter()
                    .map(|c| c.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            out.push_str(&format!("  {}: {scope}\n", p.name.as_str()));
        }
        out.push_str("Revoked topics\n");
        if self.revoked_topics.is_empty() {
            out.push_str("  (none)\n");
        }
        for t in &self.revoked_topics {
            out.push_str(&format!("  {t}: revoked (forces check-in)\n"));
        }
        let mode = match self.mode {
            Mode::Balanced => "balanced",
            Mode::Strict => "strict",
        };
        out.push_str(&format!(
            "Bands: silent > {:.2}; flagged {:.2}-{:.2}; live < {:.2}; mode {mode}\n",
            self.proceed_threshold,
            self.flag_threshold,
            self.proceed_threshold,
            self.flag_threshold
        ));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightsView {
    pub rows: Vec<WeightDelta>,
    pub bias_prior: f64,
    pub bias_learned: f64,
    pub update_count: u64,
}

pub fn show_weights(state: &PolicyState) -> WeightsView {
    WeightsView {
        rows: weight_deltas(state),
        bias_prior: state.warm_start_bias,
        bias_learned: state.bias,
        update_count: state.update_count,
    }
}

impl WeightsView {
    pub fn render(&self) -> String {
        let mut out = format!(
            "Learned coefficients vs warm-start priors ({} updates)\n{:<26} {:>9} {:>9} {:>9}\n",
            self.update_count, "feature", "prior", "learned", "delta"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<26} {:>+9.4} {:>+9.4} {:>+9.4}\n",
                r.feature.name(),
                r.prior,
                r.learned,
                r.delta
            ));
        }
        out.push_str(&format!(
            "{:<26} {:>+9.4} {:>+9.4} {:>+9.4}\n",
            "bias",
            self.bias_prior,
            self.bias_learned,
            self.bias_learned - self.bias_prior
        ));
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub session: Option<String>,
    pub sessions: usize,
    pub agent_initiated: u32,
    pub agent_approved: u32,
    /// `None` when there were no agent-initiated check-ins.
    pub agent_approval_rate: Option<f64>,
    /// Live policy check-ins plus flagged approvals.
    pub policy_checkins: u32,
    pub live_policy_checkins: u32,
    pub flagged_approvals: u32,
    pub silent_approvals: u32,
    pub blocked: u32,
    /// Approvals given by the developer at a live interruption.
    pub deliberate_approvals: u32,
    pub verification_passed: u32,
    pub verification_total: u32,
}

/// Aggregates live (non-seed) events, optionally for one session.
pub fn show_report(trace: &TraceStore, session: Option<&str>) -> Report {
    let mut r = Report {
        session: session.map(str::to_string),
        ..Report::default()
    };
    let mut seen = std::collections::BTreeSet::new();
    for e in trace.events() {
        if e.origin == Origin::Seed || session.is_some_and(|s| s != e.session_id) {
            continue;
        }
        seen.insert(e.session_id.as_str());
        match &e.body {
            TraceBody::DecisionMade(rec) => {
                let approved = rec.decision.verdict.is_approval();
                match rec.decision.initiator {
                    Initiator::AgentInitiated => {
                        r.agent_initiated += 1;
                        r.agent_approved += u32::from(approved);
                    }
                    Initiator::PolicyInitiated if rec.route == Some(Route::Blocked) => {
                        r.blocked += 1
                    }
                    Initiator::PolicyInitiated => r.live_policy_checkins += 1,
                    Initiator::FlaggedAuto => r.flagged_approvals += 1,
                    Initiator::SilentAuto => r.silent_approvals += 1,
                }
                if rec.is_deliberate() && approved {
                    r.deliberate_approvals += 1;
                }
            }
            TraceBody::VerificationRun { passed, .. } => {
                r.verification_total += 1;
                r.verification_passed += u32::from(*passed);
            }
            _ => {}
        }
    }
    r.sessions = seen.len();
    r.policy_checkins = r.live_policy_checkins + r.flagged_approvals;
    r.agent_approval_rate =
        (r.agent_initiated > 0).then(|| f64::from(r.agent_approved) / f64::from(r.agent_initiated));
    r
}

impl Report {
    pub fn render(&self) -> String {
        let scope = match &self.session {
            Some(s) => format!("session {s}"),
            None => "all sessions".to_string(),
        };
        let rate = match self.agent_approval_rate {
            Some(x) => format!("{:.0}% approved", x * 100.0),
            None => "no approvals to rate".to_string(),
        };
        format!(
            "Governance report ({scope})\n\
             Sessions: {}\n\
             Agent-initiated check-ins: {} ({rate})\n\
             Policy check-ins: {} ({} live, {} flagged)\n\
             Deliberate approvals: {}\n\
             Silent approvals: {}\n\
             Blocked: {}\n\
             Verification: {}/{} passed\n",
            self.sessions,
            self.agent_initiated,
            self.policy_checkins,
            self.live_policy_checkins,
            self.flagged_approvals,
            self.deliberate_approvals,
            self.silent_approvals,
            self.blocked,
            self.verification_passed,
            self.verification_total
        )
    }
}

/// Revokes `topic` and returns the confirmation line.
pub fn revoke_preference_topic(
    trace: &mut TraceStore,
    ctx: &EventContext,
    prefs: &mut PreferenceSet,
    topic: &str,
) -> Result<String, MemoryError> {
    let topic = crate::memory::revoke_topic(trace, ctx, prefs, topic)?;
    Ok(format!(
        "revoked {topic}: every {topic} change now triggers a check-in; accumulated states preserved"
    ))
}
