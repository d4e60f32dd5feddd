//! The approval cascade.
//!
//! Order of evaluation for one proposal:
//!
//! 1. hard constraints (`Forbid` blocks, `RequireCheckIn` forces a live check-in)
//! 2. workflow-phase gate
//! 3. revoked topics
//! 4. remembered grants (read access persists, write access is per session)
//! 5. structural gates: multi-file plans in balanced mode (every plan in
//!    strict mode) and first-time reads
//! 6. learned score, adjusted by autonomy preferences, routed into bands
//!
//! Hard constraints never consult the learned policy.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use globset::{Glob, GlobBuilder, GlobMatcher};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::preferences::PreferenceSet;
use crate::policy::{
    extract_features, score, Feature, FeatureVector, PolicyState, SessionStats, SimilarityKey,
    TraceStoreView,
};
use crate::types::{ActionKind, ActionProposal, ChangeCategory, Initiator, Phase, PreferenceName};

/// Which actions each workflow phase permits.
pub fn phase_gate(kind: ActionKind, phase: Phase) -> bool {
    use ActionKind::*;
    match phase {
        Phase::Research => matches!(kind, Read | CheckIn),
        Phase::Planning => matches!(kind, Read | Plan | CheckIn),
        Phase::Implementation => matches!(kind, Read | Apply | RunCommand | CheckIn),
        Phase::Review => matches!(kind, Read | RunCommand | CheckIn),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Forbid,
    RequireCheckIn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardConstraint {
    pub id: String,
    pub action_filter: BTreeSet<ActionKind>,
    /// Glob over repository-relative paths; empty matches everything.
    #[serde(default)]
    pub path_glob: String,
    #[serde(default)]
    pub category_filter: Option<BTreeSet<ChangeCategory>>,
    pub effect: Effect,
    pub source_text: String,
}

#[derive(Debug, Error)]
#[error("invalid glob `{glob}`: {source}")]
pub struct InvalidGlob {
    pub glob: String,
    #[source]
    pub source: globset::Error,
}

/// `*` stays within one path segment; `**` crosses segments.
pub fn compile_glob(pattern: &str) -> Result<GlobMatcher, InvalidGlob> {
    GlobBuilder::new(pattern)
        .literal_separator(true)
        .build()
        .map(|g: Glob| g.compile_matcher())
        .map_err(|source| InvalidGlob {
            glob: pattern.to_string(),
            source,
        })
}

fn normalize_path(path: &str) -> &str {
    path.trim_start_matches("./")
}

impl HardConstraint {
    pub fn matches(&self, p: &ActionProposal) -> bool {
        if !self.action_filter.contains(&p.action_kind) {
            return false;
        }
        if let Some(cats) = &self.category_filter {
            if !cats.is_empty() && !cats.contains(&p.change_category) {
                return false;
            }
        }
        if self.path_glob.is_empty() {
            return true;
        }
        // An unparsable glob matches nothing; rules are validated on insert.
        let Ok(matcher) = compile_glob(&self.path_glob) else {
            return false;
        };
        p.paths
            .iter()
            .any(|path| matcher.is_match(normalize_path(path)))
    }

    pub fn describe(&self) -> String {
        let verb = match self.effect {
            Effect::Forbid => "forbid",
            Effect::RequireCheckIn => "require check-in for",
        };
        let kinds: Vec<&str> = self.action_filter.iter().map(|k| k.as_str()).collect();
        let mut target = Vec::new();
        if !self.path_glob.is_empty() {
            target.push(format!("paths matching `{}`", self.path_glob));
        }
        if let Some(cats) = &self.category_filter {
            let names: Vec<&str> = cats.iter().map(|c| c.as_str()).collect();
            target.push(format!("{} changes", names.join("/")));
        }
        if target.is_empty() {
            target.push("all paths".into());
        }
        format!("{verb} {} on {}", kinds.join(", "), target.join(" in "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Listed from most to least restrictive.
    Blocked,
    LiveCheckIn,
    FlaggedApprove,
    SilentApprove,
}

impl Route {
    pub fn initiator(self) -> Initiator {
        match self {
            Route::Blocked | Route::LiveCheckIn => Initiator::PolicyInitiated,
            Route::FlaggedApprove => Initiator::FlaggedAuto,
            Route::SilentApprove => Initiator::SilentAuto,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Route::Blocked => "blocked",
            Route::LiveCheckIn => "live_check_in",
            Route::FlaggedApprove => "flagged_approve",
            Route::SilentApprove => "silent_approve",
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The cascade stage that decided a route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    HardConstraint,
    PhaseGate,
    PhaseRegression,
    RevokedTopic,
    RememberedGrant,
    PlanGate,
    FirstTouchGate,
    LearnedPolicy,
    RetryLimit,
}

impl Tier {
    pub fn label(self) -> &'static str {
        match self {
            Tier::HardConstraint => "hard constraint",
            Tier::PhaseGate => "phase gate",
            Tier::PhaseRegression => "phase regression",
            Tier::RevokedTopic => "revoked topic",
            Tier::RememberedGrant => "remembered access",
            Tier::PlanGate => "plan gate",
            Tier::FirstTouchGate => "first-touch gate",
            Tier::LearnedPolicy => "learned policy",
            Tier::RetryLimit => "retry limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeOutcome {
    pub route: Route,
    pub initiator: Initiator,
    /// Absent whenever a hard constraint decided.
    pub score: Option<f64>,
    pub tier: Tier,
    pub explanation: String,
    pub features: FeatureVector,
    pub key: SimilarityKey,
    pub prior_approvals: u32,
    pub prior_denials: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Balanced,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub proceed: f64,
    pub flag: f64,
    pub mode: Mode,
    /// How far `PreferFewerCheckins` lowers the flag threshold.
    pub prefer_fewer_shift: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            proceed: 0.90,
            flag: 0.20,
            mode: Mode::Balanced,
            prefer_fewer_shift: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid thresholds: need 0 < flag < proceed < 1 (flag {flag}, proceed {proceed})")]
pub struct InvalidThresholds {
    pub flag: f64,
    pub proceed: f64,
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), InvalidThresholds> {
        let ordered = 0.0 < self.flag && self.flag < self.proceed && self.proceed < 1.0;
        if ordered && (0.0..self.flag).contains(&self.prefer_fewer_shift) {
            Ok(())
        } else {
            Err(InvalidThresholds {
                flag: self.flag,
                proceed: self.proceed,
            })
        }
    }
}

/// Plain band routing: `> proceed` silent, `[flag, proceed]` flagged, `< flag` live.
pub fn route_for_score(s: f64, proceed: f64, flag: f64) -> Route {
    if s > proceed {
        Route::SilentApprove
    } else if s >= flag {
        Route::FlaggedApprove
    } else {
        Route::LiveCheckIn
    }
}

/// Files covered by remembered approvals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Grants {
    /// Persist across sessions.
    pub read: HashSet<String>,
    /// Scoped to the current session.
    pub write: HashSet<String>,
}

impl Grants {
    /// Number of `p`'s distinct paths covered, and the total.
    pub fn coverage(&self, p: &ActionProposal) -> Option<(usize, usize)> {
        let set = match p.action_kind {
            ActionKind::Read => &self.read,
            ActionKind::Apply => &self.write,
            _ => return None,
        };
        let paths = p.unique_paths();
        if paths.is_empty() {
            return None;
        }
        let covered = paths
            .iter()
            .filter(|path| set.contains(normalize_path(path)))
            .count();
        Some((covered, paths.len()))
    }
}

pub struct GovernanceContext<'a> {
    pub constraints: &'a [HardConstraint],
    pub preferences: &'a PreferenceSet,
    pub state: &'a PolicyState,
    pub thresholds: &'a Thresholds,
    pub history: &'a dyn TraceStoreView,
    pub session: &'a SessionStats,
    pub grants: &'a Grants,
}

fn history_note(key: &SimilarityKey, approvals: u32, denials: u32) -> String {
    format!("prior approvals {approvals}, prior denials {denials} on {key}")
}

/// Adjusts a band route for autonomy preferences. Revocation only ever
/// tightens; the two relaxing preferences only move LiveCheckIn to
/// FlaggedApprove and never touch hard-risk signals.
pub fn apply_preferences(
    p: &ActionProposal,
    x: &FeatureVector,
    prefs: &PreferenceSet,
    thresholds: &Thresholds,
    s: Option<f64>,
    base: Route,
) -> Route {
    if base == Route::Blocked {
        return base;
    }
    if prefs.is_revoked(p.change_category) {
        return base.min(Route::LiveCheckIn);
    }
    let mut route = base;
    if route == Route::LiveCheckIn
        && !p.change_category.is_structural()
        && prefs.applies(PreferenceName::PreferFewerCheckins, p.change_category)
    {
        if let Some(s) = s {
            if s >= thresholds.flag - thresholds.prefer_fewer_shift {
                route = Route::FlaggedApprove;
            }
        }
    }
    if route == Route::LiveCheckIn
        && p.action_kind == ActionKind::Plan
        && thresholds.mode == Mode::Balanced
        && prefs.applies(PreferenceName::SkipLowRiskPlanCheckpoint, p.change_category)
        && x.get(Feature::IsSecuritySensitive) == 0.0
        && x.get(Feature::ChangePatternRisk) < 0.7
        && x.get(Feature::PathTrust) >= 0.3
    {
        route = Route::FlaggedApprove;
    }
    route
}

pub fn evaluate(p: &ActionProposal, ctx: &GovernanceContext<'_>) -> CascadeOutcome {
    let key = SimilarityKey::of(p);
    let (prior_approvals, prior_denials) = ctx.history.counts_for(&key);
    let x = extract_features(p, ctx.history, ctx.session);
    let outcome =
        |route: Route, tier: Tier, score: Option<f64>, explanation: String| CascadeOutcome {
            route,
            initiator: route.initiator(),
            score,
            tier,
            explanation,
            features: x,
            key: key.clone(),
            prior_approvals,
            prior_denials,
        };

    if let Some(c) = ctx
        .constraints
        .iter()
        .find(|c| c.effect == Effect::Forbid && c.matches(p))
    {
        return outcome(
            Route::Blocked,
            Tier::HardConstraint,
            None,
            format!(
                "hard constraint {}: {} (\"{}\")",
                c.id,
                c.describe(),
                c.source_text
            ),
        );
    }
    if let Some(c) = ctx
        .constraints
        .iter()
        .find(|c| c.effect == Effect::RequireCheckIn && c.matches(p))
    {
        return outcome(
            Route::LiveCheckIn,
            Tier::HardConstraint,
            None,
            format!(
                "hard constraint {}: {} (\"{}\")",
                c.id,
                c.describe(),
                c.source_text
            ),
        );
    }

    let s = score(ctx.state, &x);
    let history = history_note(&key, prior_approvals, prior_denials);

    if x.get(Feature::PhaseAlignment) == 0.0 {
        return outcome(
            Route::LiveCheckIn,
            Tier::PhaseGate,
            Some(s),
            format!(
                "phase gate: {} is not permitted during {}",
                p.action_kind, p.phase
            ),
        );
    }
    if ctx.preferences.is_revoked(p.change_category) {
        return outcome(
            Route::LiveCheckIn,
            Tier::RevokedTopic,
            Some(s),
            format!(
                "revoked topic: {} is outside trusted scope; {history}",
                p.change_category
            ),
        );
    }
    if let Some((covered, total)) = ctx.grants.coverage(p) {
        if covered == total {
            let access = if p.action_kind == ActionKind::Read {
                "read"
            } else {
                "write"
            };
            return outcome(
                Route::SilentApprove,
                Tier::RememberedGrant,
                Some(s),
                format!(
                    "reused prior {access} access on {covered}/{total} files; prior approvals {prior_approvals}; prior denials {prior_denials}"
                ),
            );
        }
    }

    let structural = match p.action_kind {
        ActionKind::Plan if ctx.thresholds.mode == Mode::Strict => Some((
            Tier::PlanGate,
            "plan gate: strict mode reviews every plan".to_string(),
        )),
        ActionKind::Plan if p.files_touched >= 2 => Some((
            Tier::PlanGate,
            format!("plan gate: plan spans {} files", p.files_touched),
        )),
        ActionKind::Read if x.get(Feature::IsFirstTouch) == 1.0 => Some((
            Tier::FirstTouchGate,
            format!(
                "first-touch gate: first read of {}; {history}",
                untouched_list(p, ctx.history)
            ),
        )),
        _ => None,
    };
    if let Some((tier, why)) = structural {
        let route = apply_preferences(
            p,
            &x,
            ctx.preferences,
            ctx.thresholds,
            Some(s),
            Route::LiveCheckIn,
        );
        let why = if route == Route::LiveCheckIn {
            why
        } else {
            format!("{why}; relaxed by autonomy preference")
        };
        return outcome(route, tier, Some(s), why);
    }

    let base = route_for_score(s, ctx.thresholds.proceed, ctx.thresholds.flag);
    let route = apply_preferences(p, &x, ctx.preferences, ctx.thresholds, Some(s), base);
    let band = match route {
        Route::SilentApprove => format!(
            "score {s:.2} above proceed threshold {:.2}",
            ctx.thresholds.proceed
        ),
        Route::FlaggedApprove if base == Route::LiveCheckIn => format!(
            "score {s:.2} below flag threshold {:.2}, relaxed by autonomy preference",
            ctx.thresholds.flag
        ),
        Route::FlaggedApprove => format!(
            "score {s:.2} within [{:.2}, {:.2}]",
            ctx.thresholds.flag, ctx.thresholds.proceed
        ),
        _ => format!(
            "score {s:.2} below flag threshold {:.2}",
            ctx.thresholds.flag
        ),
    };
    outcome(
        route,
        Tier::LearnedPolicy,
        Some(s),
        format!("learned policy: {band}; {history}"),
    )
}

fn untouched_list(p: &ActionProposal, history: &dyn TraceStoreView) -> String {
    let fresh: Vec<&str> = p
        .unique_paths()
        .into_iter()
        .filter(|path| !history.is_touched(path))
        .collect();
    fresh.join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyState, SessionStats};
    use crate::types::{AutonomyPreference, ChangeCategory};
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[derive(Default)]
    struct History {
        counts: HashMap<SimilarityKey, (u32, u32)>,
        touched: HashSet<String>,
    }

    impl TraceStoreView for History {
        fn counts_for(&self, key: &SimilarityKey) -> (u32, u32) {
            self.counts.get(key).copied().unwrap_or_default()
        }
        fn is_touched(&self, path: &str) -> bool {
            self.touched.contains(path)
        }
        fn recent_verifications(&self) -> (u32, u32) {
            (0, 0)
        }
    }

    /// A state whose score is exactly `s` for every input.
    fn constant_state(s: f64) -> PolicyState {
        let mut st = PolicyState::zeroed("r", 0.05);
        st.bias = (s / (1.0 - s)).ln();
        st
    }

    fn apply_on(path: &str, category: ChangeCategory) -> ActionProposal {
        ActionProposal {
            id: 7,
            action_kind: ActionKind::Apply,
            paths: vec![path.into()],
            change_category: category,
            diff_lines: 12,
            files_touched: 1,
            model_confidence: 0.8,
            phase: Phase::Implementation,
            rationale: String::new(),
        }
    }

    fn forbid_prod() -> HardConstraint {
        HardConstraint {
            id: "r1".into(),
            action_filter: [ActionKind::Apply, ActionKind::RunCommand].into(),
            path_glob: "config/prod/**".into(),
            category_filter: None,
            effect: Effect::Forbid,
            source_text: "never write to files under config/prod/".into(),
        }
    }

    struct Fixture {
        constraints: Vec<HardConstraint>,
        prefs: PreferenceSet,
        state: PolicyState,
        thresholds: Thresholds,
        history: History,
        session: SessionStats,
        grants: Grants,
    }

    impl Fixture {
        fn new(s: f64) -> Self {
            Self {
                constraints: vec![],
                prefs: PreferenceSet::default(),
                state: constant_state(s),
                thresholds: Thresholds::default(),
                history: History::default(),
                session: SessionStats::default(),
                grants: Grants::default(),
            }
        }

        fn eval(&self, p: &ActionProposal) -> CascadeOutcome {
            evaluate(
                p,
                &GovernanceContext {
                    constraints: &self.constraints,
                    preferences: &self.prefs,
                    state: &self.state,
                    thresholds: &self.thresholds,
                    history: &self.history,
                    session: &self.session,
                    grants: &self.grants,
                },
            )
        }
    }

    #[test]
    fn forbid_blocks_even_at_high_score() {
        let mut fx = Fixture::new(0.99);
        fx.constraints.push(forbid_prod());
        let out = fx.eval(&apply_on("config/prod/app.yaml", ChangeCategory::Config));
        assert_eq!(out.route, Route::Blocked);
        assert_eq!(out.score, None);
        assert_eq!(out.initiator, Initiator::PolicyInitiated);
        assert!(out.explanation.contains("hard constraint r1"));
        let elsewhere = fx.eval(&apply_on("config/dev/app.yaml", ChangeCategory::Config));
        assert_eq!(elsewhere.route, Route::SilentApprove);
    }

    #[test]
    fn forbid_wins_over_require_checkin() {
        let mut fx = Fixture::new(0.5);
        let mut ask = forbid_prod();
        ask.id = "r0".into();
        ask.effect = Effect::RequireCheckIn;
        fx.constraints = vec![ask, forbid_prod()];
        assert_eq!(
            fx.eval(&apply_on("config/prod/a.yaml", ChangeCategory::Config))
                .route,
            Route::Blocked
        );
    }

    #[test]
    fn bands_route_walkthrough_scores() {
        let p = apply_on("lib/util.py", ChangeCategory::General);
        let cases = [
            (0.95, Route::SilentApprove),
            (0.55, Route::FlaggedApprove),
            (0.10, Route::LiveCheckIn),
        ];
        for (s, expected) in cases {
            let out = Fixture::new(s).eval(&p);
            assert_eq!(out.route, expected, "score {s}");
            assert_eq!(out.tier, Tier::LearnedPolicy);
            assert!((out.score.unwrap() - s).abs() < 1e-12);
        }
    }

    #[test]
    fn band_endpoints_belong_to_middle_band() {
        assert_eq!(route_for_score(0.90, 0.90, 0.20), Route::FlaggedApprove);
        assert_eq!(route_for_score(0.20, 0.90, 0.20), Route::FlaggedApprove);
        assert_eq!(route_for_score(0.2 - 1e-12, 0.90, 0.20), Route::LiveCheckIn);
        assert_eq!(
            route_for_score(0.9 + 1e-12, 0.90, 0.20),
            Route::SilentApprove
        );
    }

    #[test]
    fn phase_matrix() {
        assert!(!phase_gate(ActionKind::Apply, Phase::Research));
        for phase in [
            Phase::Research,
            Phase::Planning,
            Phase::Implementation,
            Phase::Review,
        ] {
            assert!(phase_gate(ActionKind::Read, phase));
            assert!(phase_gate(ActionKind::CheckIn, phase));
        }
        assert!(phase_gate(ActionKind::Plan, Phase::Planning));
        assert!(!phase_gate(ActionKind::Plan, Phase::Implementation));
        assert!(!phase_gate(ActionKind::Apply, Phase::Review));
        assert!(phase_gate(ActionKind::RunCommand, Phase::Review));
    }

    #[test]
    fn apply_in_research_hits_phase_gate() {
        let mut p = apply_on("lib/util.py", ChangeCategory::General);
        p.phase = Phase::Research;
        let out = Fixture::new(0.99).eval(&p);
        assert_eq!(out.route, Route::LiveCheckIn);
        assert_eq!(out.tier, Tier::PhaseGate);
        assert!(out.explanation.contains("research"));
    }

    fn low_risk_plan() -> ActionProposal {
        ActionProposal {
            id: 3,
            action_kind: ActionKind::Plan,
            paths: vec!["lib/util.py".into()],
            change_category: ChangeCategory::General,
            diff_lines: 0,
            files_touched: 1,
            model_confidence: 0.8,
            phase: Phase::Planning,
            rationale: String::new(),
        }
    }

    fn trusted(fx: &mut Fixture, key: SimilarityKey) {
        fx.history.counts.insert(key, (4, 0));
        fx.history.touched.insert("lib/util.py".into());
        fx.history.touched.insert("lib/auth.py".into());
    }

    #[test]
    fn skip_low_risk_plan_relaxes_low_score_plan() {
        let mut fx = Fixture::new(0.15);
        trusted(&mut fx, SimilarityKey::new(ChangeCategory::General, "lib"));
        assert_eq!(fx.eval(&low_risk_plan()).route, Route::LiveCheckIn);
        fx.prefs.set(AutonomyPreference::new(
            PreferenceName::SkipLowRiskPlanCheckpoint,
        ));
        assert_eq!(fx.eval(&low_risk_plan()).route, Route::FlaggedApprove);
    }

    #[test]
    fn skip_low_risk_plan_never_bypasses_security() {
        let mut fx = Fixture::new(0.15);
        trusted(&mut fx, SimilarityKey::new(ChangeCategory::General, "lib"));
        fx.prefs.set(AutonomyPreference::new(
            PreferenceName::SkipLowRiskPlanCheckpoint,
        ));
        let mut p = low_risk_plan();
        p.paths = vec!["lib/auth.py".into()];
        assert_eq!(fx.eval(&p).route, Route::LiveCheckIn);
    }

    #[test]
    fn strict_mode_keeps_plan_gate() {
        let mut fx = Fixture::new(0.15);
        trusted(&mut fx, SimilarityKey::new(ChangeCategory::General, "lib"));
        fx.prefs.set(AutonomyPreference::new(
            PreferenceName::SkipLowRiskPlanCheckpoint,
        ));
        fx.thresholds.mode = Mode::Strict;
        let out = fx.eval(&low_risk_plan());
        assert_eq!(out.route, Route::LiveCheckIn);
        assert_eq!(out.tier, Tier::PlanGate);
    }

    #[test]
    fn multi_file_plan_is_gated_in_balanced_mode() {
        let fx = Fixture::new(0.99);
        let mut p = low_risk_plan();
        p.paths.push("lib/other.py".into());
        p.files_touched = 2;
        let out = fx.eval(&p);
        assert_eq!(out.route, Route::LiveCheckIn);
        assert_eq!(out.tier, Tier::PlanGate);
    }

    #[test]
    fn prefer_fewer_checkins_shifts_flag_threshold_for_low_risk_only() {
        let mut fx = Fixture::new(0.17);
        fx.prefs
            .set(AutonomyPreference::new(PreferenceName::PreferFewerCheckins));
        assert_eq!(
            fx.eval(&apply_on("lib/util.py", ChangeCategory::General))
                .route,
            Route::FlaggedApprove
        );
        assert_eq!(
            fx.eval(&apply_on("task_api/api.py", ChangeCategory::Api))
                .route,
            Route::LiveCheckIn
        );
        let fx = Fixture::new(0.14);
        assert_eq!(
            fx.eval(&apply_on("lib/util.py", ChangeCategory::General))
                .route,
            Route::LiveCheckIn
        );
    }

    #[test]
    fn revoked_topic_forces_checkin() {
        let mut fx = Fixture::new(0.97);
        fx.prefs.revoke(ChangeCategory::Api);
        let out = fx.eval(&apply_on("task_api/api.py", ChangeCategory::Api));
        assert_eq!(out.route, Route::LiveCheckIn);
        assert_eq!(out.tier, Tier::RevokedTopic);
        assert_eq!(
            fx.eval(&apply_on("lib/util.py", ChangeCategory::General))
                .route,
            Route::SilentApprove
        );
    }

    #[test]
    fn first_read_is_gated_then_grant_reuse_is_silent() {
        let mut fx = Fixture::new(0.99);
        let mut read = apply_on("task_api/api.py", ChangeCategory::General);
        read.action_kind = ActionKind::Read;
        read.diff_lines = 0;
        read.phase = Phase::Research;
        let out = fx.eval(&read);
        assert_eq!(
            (out.route, out.tier),
            (Route::LiveCheckIn, Tier::FirstTouchGate)
        );
        fx.grants.read.insert("task_api/api.py".into());
        let out = fx.eval(&read);
        assert_eq!(
            (out.route, out.tier),
            (Route::SilentApprove, Tier::RememberedGrant)
        );
        assert!(out
            .explanation
            .starts_with("reused prior read access on 1/1 files"));
    }

    #[test]
    fn glob_semantics() {
        let m = compile_glob("config/prod/**").unwrap();
        assert!(m.is_match("config/prod/app.yaml"));
        assert!(m.is_match("config/prod/nested/deep.yaml"));
        assert!(!m.is_match("config/production.yaml"));
        let one = compile_glob("src/*.rs").unwrap();
        assert!(one.is_match("src/lib.rs"));
        assert!(!one.is_match("src/a/lib.rs"));
    }

    #[test]
    fn thresholds_validate() {
        assert!(Thresholds::default().validate().is_ok());
        let bad = Thresholds {
            flag: 0.9,
            proceed: 0.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn arb_category() -> impl Strategy<Value = ChangeCategory> {
        prop::sample::select(ChangeCategory::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn bands_are_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(route_for_score(lo, 0.9, 0.2) <= route_for_score(hi, 0.9, 0.2));
        }

        #[test]
        fn revocation_never_loosens(s in 0.001f64..0.999, cat in arb_category(), revoke in arb_category()) {
            let mut fx = Fixture::new(s);
            let p = apply_on("lib/util.py", cat);
            let before = fx.eval(&p).route;
            fx.prefs.revoke(revoke);
            let after = fx.eval(&p).route;
            prop_assert!(after <= before);
        }

        #[test]
        fn live_checkins_always_explain(s in 0.001f64..0.999, cat in arb_category(), kind in prop::sample::select(vec![ActionKind::Apply, ActionKind::RunCommand])) {
            let fx = Fixture::new(s);
            let mut p = apply_on("lib/util.py", cat);
            p.action_kind = kind;
            let out = fx.eval(&p);
            if out.route == Route::LiveCheckIn {
                prop_assert!(out.explanation.starts_with(out.tier.label()));
            }
        }
    }
}
