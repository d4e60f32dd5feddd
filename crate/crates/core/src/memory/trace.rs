//! Append-only trace store backed by JSON Lines.
//!
//! Every developer–agent interaction becomes one line in `traces.jsonl`.
//! The in-memory indexes (similarity counts, touched paths, verification
//! window, remembered grants) are derived from the events alone, so
//! reopening the file reproduces every query exactly.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MemoryError;
use crate::governance::{Grants, Route, Tier};
use crate::policy::features::VERIFICATION_WINDOW;
use crate::policy::{FeatureVector, SimilarityKey, TraceStoreView};
use crate::types::{
    ActionKind, AutonomyPreference, ChangeCategory, Decision, Initiator, Phase, Verdict,
};

pub const TRACE_FILE: &str = "traces.jsonl";

/// Whether an event came from a real session or from synthetic seeding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Live,
    Seed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckInReason {
    Uncertainty,
    GuidanceConflict,
    PlanDeviation,
    DesignTradeoff,
}

/// A decision plus the proposal metadata needed to index it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub decision: Decision,
    pub action_kind: ActionKind,
    #[serde(default)]
    pub paths: Vec<String>,
    pub change_category: ChangeCategory,
    pub phase: Phase,
    pub key: SimilarityKey,
    /// Cascade route; absent for agent-initiated check-ins.
    #[serde(default)]
    pub route: Option<Route>,
    #[serde(default)]
    pub tier: Option<Tier>,
    /// Features the policy saw; present whenever the decision trained it.
    #[serde(default)]
    pub features: Option<FeatureVector>,
    #[serde(default)]
    pub developer_text: Option<String>,
    #[serde(default)]
    pub reason: Option<CheckInReason>,
}

impl DecisionRecord {
    /// A decision the developer made at a live interruption.
    pub fn is_deliberate(&self) -> bool {
        matches!(
            self.decision.initiator,
            Initiator::AgentInitiated | Initiator::PolicyInitiated
        ) && self.route != Some(Route::Blocked)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PreferenceDelta {
    Set { preference: AutonomyPreference },
    RevokeTopic { topic: ChangeCategory },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum TraceBody {
    DecisionMade(DecisionRecord),
    CorrectionGiven {
        proposal_id: u64,
        text: String,
    },
    GuidanceGiven {
        snippet_id: u64,
        text: String,
    },
    VerificationRun {
        command: String,
        passed: bool,
        #[serde(default)]
        details: Option<String>,
    },
    RuleAdded {
        rule_id: String,
        classification: String,
    },
    PreferenceChanged(PreferenceDelta),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub session_id: String,
    pub repo_id: String,
    pub timestamp: u64,
    #[serde(default)]
    pub origin: Origin,
    #[serde(flatten)]
    pub body: TraceBody,
}

/// Where new events are attributed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventContext {
    pub session_id: String,
    pub repo_id: String,
    pub origin: Origin,
}

impl EventContext {
    pub fn live(session_id: impl Into<String>, repo_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            repo_id: repo_id.into(),
            origin: Origin::Live,
        }
    }

    pub fn seed(session_id: impl Into<String>, repo_id: impl Into<String>) -> Self {
        Self {
            origin: Origin::Seed,
            ..Self::live(session_id, repo_id)
        }
    }
}

#[derive(Debug, Default)]
pub struct TraceStore {
    events: Vec<TraceEvent>,
    path: Option<PathBuf>,
    counts: HashMap<SimilarityKey, (u32, u32)>,
    touched: HashSet<String>,
    verifications: VecDeque<bool>,
    last_in_session: HashMap<String, u64>,
    last_timestamp: u64,
    read_grants: HashSet<String>,
    write_grants: HashMap<String, HashSet<String>>,
}

impl TraceStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) the trace file in `dir`. A trailing line without a
    /// newline is a torn write from a crashed appender and is ignored.
    pub fn open(dir: &Path) -> Result<Self, MemoryError> {
        let path = dir.join(TRACE_FILE);
        let mut store = Self {
            path: Some(path.clone()),
            ..Self::default()
        };
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(store),
            Err(e) => return Err(e.into()),
        };
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        for (n, line) in complete.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: TraceEvent =
                serde_json::from_str(line).map_err(|e| MemoryError::CorruptTrace {
                    line: n + 1,
                    reason: e.to_string(),
                })?;
            store.index(&event);
            store.events.push(event);
        }
        Ok(store)
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn next_timestamp(&self) -> u64 {
        self.last_timestamp + 1
    }

    /// Appends `event`; durable on disk before returning.
    pub fn append(&mut self, event: TraceEvent) -> Result<(), MemoryError> {
        if let Some(&last) = self.last_in_session.get(&event.session_id) {
            if event.timestamp <= last {
                return Err(MemoryError::OutOfOrderEvent {
                    session: event.session_id,
                    timestamp: event.timestamp,
                    last,
                });
            }
        }
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&event)?;
            line.push('\n');
            let mut f: File = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        self.index(&event);
        self.events.push(event);
        Ok(())
    }

    /// Appends `body` at the next timestamp.
    pub fn record(&mut self, ctx: &EventContext, body: TraceBody) -> Result<u64, MemoryError> {
        let timestamp = self.next_timestamp();
        self.append(TraceEvent {
            session_id: ctx.session_id.clone(),
            repo_id: ctx.repo_id.clone(),
            timestamp,
            origin: ctx.origin,
            body,
        })?;
        Ok(timestamp)
    }

    fn index(&mut self, event: &TraceEvent) {
        self.last_timestamp = self.last_timestamp.max(event.timestamp);
        self.last_in_session
            .insert(event.session_id.clone(), event.timestamp);
        match &event.body {
            // Blocks are enforcement, not developer judgment.
            TraceBody::DecisionMade(rec) if rec.route == Some(Route::Blocked) => {}
            TraceBody::DecisionMade(rec) => {
                let entry = self.counts.entry(rec.key.clone()).or_default();
                let approved = rec.decision.verdict.is_approval();
                if approved {
                    entry.0 += 1;
                    for p in &rec.paths {
                        self.touched.insert(p.trim_start_matches("./").to_string());
                    }
                } else {
                    entry.1 += 1;
                }
                if rec.decision.verdict == Verdict::ApprovedRemembered {
                    let paths = rec
                        .paths
                        .iter()
                        .map(|p| p.trim_start_matches("./").to_string());
                    match rec.action_kind {
                        ActionKind::Read => self.read_grants.extend(paths),
                        ActionKind::Apply => self
                            .write_grants
                            .entry(event.session_id.clone())
                            .or_default()
                            .extend(paths),
                        _ => {}
                    }
                }
            }
            TraceBody::VerificationRun { passed, .. } => {
                self.verifications.push_back(*passed);
                while self.verifications.len() > VERIFICATION_WINDOW {
                    self.verifications.pop_front();
                }
            }
            _ => {}
        }
    }

    /// Read grants persist across sessions; write grants only within `session_id`.
    pub fn grants(&self, session_id: &str) -> Grants {
        Grants {
            read: self.read_grants.clone(),
            write: self
                .write_grants
                .get(session_id)
                .cloned()
                .unwrap_or_default(),
        }
    }

    pub fn decisions(&self) -> impl Iterator<Item = (&TraceEvent, &DecisionRecord)> {
        self.events.iter().filter_map(|e| match &e.body {
            TraceBody::DecisionMade(rec) => Some((e, rec)),
            _ => None,
        })
    }
}

impl TraceStoreView for TraceStore {
    fn counts_for(&self, key: &SimilarityKey) -> (u32, u32) {
        self.counts.get(key).copied().unwrap_or_default()
    }

    fn is_touched(&self, path: &str) -> bool {
        self.touched.contains(path.trim_start_matches("./"))
    }

    fn recent_verifications(&self) -> (u32, u32) {
        let failures = self.verifications.iter().filter(|ok| !**ok).count() as u32;
        (failures, self.verifications.len() as u32)
    }
}

/// Free-function form of [`TraceStoreView::counts_for`].
pub fn counts_for(store: &TraceStore, key: &SimilarityKey) -> (u32, u32) {
    store.counts_for(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Verdict;

    pub(crate) fn decision_event(
        session: &str,
        ts: u64,
        key: SimilarityKey,
        verdict: Verdict,
    ) -> TraceEvent {
        TraceEvent {
            session_id: session.into(),
            repo_id: "repo".into(),
            timestamp: ts,
            origin: Origin::Live,
            body: TraceBody::DecisionMade(DecisionRecord {
                decision: Decision {
                    proposal_id: ts,
                    verdict,
                    initiator: Initiator::PolicyInitiated,
                    score: Some(0.1),
                    timestamp: ts,
                },
                action_kind: ActionKind::Apply,
                paths: vec![format!("{}/f{ts}.py", key.area)],
                change_category: key.category,
                phase: Phase::Implementation,
                key,
                route: Some(Route::LiveCheckIn),
                tier: Some(Tier::LearnedPolicy),
                features: None,
                developer_text: None,
                reason: None,
            }),
        }
    }

    fn api_key() -> SimilarityKey {
        SimilarityKey::new(ChangeCategory::Api, "task_api")
    }

    #[test]
    fn first_event_then_out_of_order() {
        let mut s = TraceStore::in_memory();
        s.append(decision_event("s1", 5, api_key(), Verdict::Approved))
            .unwrap();
        let err = s
            .append(decision_event("s1", 5, api_key(), Verdict::Approved))
            .unwrap_err();
        assert!(matches!(err, MemoryError::OutOfOrderEvent { .. }));
        // Other sessions keep their own ordering.
        s.append(decision_event("s2", 1, api_key(), Verdict::Approved))
            .unwrap();
    }

    #[test]
    fn counts_by_key() {
        let mut s = TraceStore::in_memory();
        assert_eq!(s.counts_for(&api_key()), (0, 0));
        for ts in 1..=3 {
            s.append(decision_event("s", ts, api_key(), Verdict::Denied))
                .unwrap();
        }
        assert_eq!(s.counts_for(&api_key()), (0, 3));
        s.append(decision_event(
            "s",
            4,
            api_key(),
            Verdict::ApprovedRemembered,
        ))
        .unwrap();
        s.append(decision_event(
            "s",
            5,
            api_key(),
            Verdict::CorrectedThenApproved,
        ))
        .unwrap();
        assert_eq!(counts_for(&s, &api_key()), (2, 3));
    }

    #[test]
    fn sixty_decisions_are_all_counted() {
        let mut s = TraceStore::in_memory();
        for ts in 1..=60 {
            s.append(decision_event("seed", ts, api_key(), Verdict::Approved))
                .unwrap();
        }
        assert_eq!(s.decisions().count(), 60);
        assert_eq!(s.counts_for(&api_key()), (60, 0));
    }

    #[test]
    fn reopen_reproduces_indexes_and_ignores_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = TraceStore::open(dir.path()).unwrap();
        s.append(decision_event("s", 1, api_key(), Verdict::Denied))
            .unwrap();
        s.append(decision_event("s", 2, api_key(), Verdict::Approved))
            .unwrap();
        let ctx = EventContext::live("s", "repo");
        s.record(
            &ctx,
            TraceBody::VerificationRun {
                command: "false".into(),
                passed: false,
                details: None,
            },
        )
        .unwrap();
        let mut f = OpenOptions::new()
            .append(true)
            .open(dir.path().join(TRACE_FILE))
            .unwrap();
        f.write_all(b"{\"session_id\":\"s\",\"tim").unwrap();
        let back = TraceStore::open(dir.path()).unwrap();
        assert_eq!(back.events(), s.events());
        assert_eq!(back.counts_for(&api_key()), (1, 1));
        assert_eq!(back.recent_verifications(), (1, 1));
        assert!(back.is_touched("task_api/f2.py"));
        assert!(!back.is_touched("task_api/f1.py"));
    }

    #[test]
    fn corrupt_complete_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(TRACE_FILE), "not json\n").unwrap();
        assert!(matches!(
            TraceStore::open(dir.path()),
            Err(MemoryError::CorruptTrace { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_event_kind_is_rejected() {
        let line =
            r#"{"session_id":"s","repo_id":"r","timestamp":1,"kind":"teleported","payload":{}}"#;
        assert!(serde_json::from_str::<TraceEvent>(line).is_err());
    }

    #[test]
    fn grants_read_persist_write_per_session() {
        let mut s = TraceStore::in_memory();
        let mut read = decision_event(
            "s1",
            1,
            SimilarityKey::new(ChangeCategory::General, "a"),
            Verdict::ApprovedRemembered,
        );
        let mut write = decision_event(
            "s1",
            2,
            SimilarityKey::new(ChangeCategory::General, "a"),
            Verdict::ApprovedRemembered,
        );
        if let TraceBody::DecisionMade(rec) = &mut read.body {
            rec.action_kind = ActionKind::Read;
            rec.paths = vec!["a/x.py".into()];
        }
        if let TraceBody::DecisionMade(rec) = &mut write.body {
            rec.paths = vec!["a/y.py".into()];
        }
        s.append(read).unwrap();
        s.append(write).unwrap();
        let g1 = s.grants("s1");
        assert!(g1.read.contains("a/x.py") && g1.write.contains("a/y.py"));
        let g2 = s.grants("s2");
        assert!(g2.read.contains("a/x.py") && g2.write.is_empty());
    }

    #[test]
    fn verification_window_keeps_last_twenty() {
        let mut s = TraceStore::in_memory();
        let ctx = EventContext::live("s", "r");
        for i in 0..25 {
            s.record(
                &ctx,
                TraceBody::VerificationRun {
                    command: "t".into(),
                    passed: i >= 5,
                    details: None,
                },
            )
            .unwrap();
        }
        assert_eq!(s.recent_verifications(), (0, 20));
    }
}
