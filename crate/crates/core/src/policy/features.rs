//! The 13 standardized policy features and how proposals map onto them.
//!
//! Every feature lands in [0, 1] and is monotone in the risk (or trust)
//! signal it encodes, so coefficient signs stay interpretable.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::governance::phase_gate;
use crate::types::{ActionKind, ActionProposal, ChangeCategory, Phase};

pub const FEATURE_COUNT: usize = 13;

/// Diff size at which the size feature saturates.
pub const DIFF_SATURATION_LINES: f64 = 500.0;
/// Files touched at which blast radius saturates.
pub const BLAST_SATURATION_FILES: f64 = 10.0;
/// Prior decision count at which approval/denial history saturates.
pub const COUNT_SATURATION: f64 = 10.0;
/// Window of recent verification runs feeding the failure rate.
pub const VERIFICATION_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    DiffSizeNorm,
    BlastRadiusNorm,
    ChangePatternRisk,
    PriorApprovalsNorm,
    PriorDenialsNorm,
    IsSecuritySensitive,
    VerificationFailureRate,
    ModelConfidenceAvg,
    IsFirstTouch,
    ActionTypeRisk,
    PhaseAlignment,
    SessionApprovalRate,
    PathTrust,
}

impl Feature {
    pub const ALL: [Feature; FEATURE_COUNT] = [
        Feature::DiffSizeNorm,
        Feature::BlastRadiusNorm,
        Feature::ChangePatternRisk,
        Feature::PriorApprovalsNorm,
        Feature::PriorDenialsNorm,
        Feature::IsSecuritySensitive,
        Feature::VerificationFailureRate,
        Feature::ModelConfidenceAvg,
        Feature::IsFirstTouch,
        Feature::ActionTypeRisk,
        Feature::PhaseAlignment,
        Feature::SessionApprovalRate,
        Feature::PathTrust,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::DiffSizeNorm => "diff_size_norm",
            Feature::BlastRadiusNorm => "blast_radius_norm",
            Feature::ChangePatternRisk => "change_pattern_risk",
            Feature::PriorApprovalsNorm => "prior_approvals_norm",
            Feature::PriorDenialsNorm => "prior_denials_norm",
            Feature::IsSecuritySensitive => "is_security_sensitive",
            Feature::VerificationFailureRate => "verification_failure_rate",
            Feature::ModelConfidenceAvg => "model_confidence_avg",
            Feature::IsFirstTouch => "is_first_touch",
            Feature::ActionTypeRisk => "action_type_risk",
            Feature::PhaseAlignment => "phase_alignment",
            Feature::SessionApprovalRate => "session_approval_rate",
            Feature::PathTrust => "path_trust",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Standardized features for one proposal. Always 13 finite values in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector([f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn zeros() -> Self {
        Self([0.0; FEATURE_COUNT])
    }

    /// Clamps each component into [0, 1]; non-finite values become 0.
    pub fn new(values: [f64; FEATURE_COUNT]) -> Self {
        Self(values.map(|v| {
            if v.is_finite() {
                v.clamp(0.0, 1.0)
            } else {
                0.0
            }
        }))
    }

    pub fn get(&self, f: Feature) -> f64 {
        self.0[f.index()]
    }

    pub fn with(mut self, f: Feature, value: f64) -> Self {
        self.0[f.index()] = if value.is_finite() {
            value.clamp(0.0, 1.0)
        } else {
            0.0
        };
        self
    }

    pub fn as_array(&self) -> &[f64; FEATURE_COUNT] {
        &self.0
    }

    pub fn named(&self) -> BTreeMap<&'static str, f64> {
        Feature::ALL
            .iter()
            .map(|f| (f.name(), self.get(*f)))
            .collect()
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = String;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; FEATURE_COUNT] = v
            .try_into()
            .map_err(|v: Vec<f64>| format!("expected {FEATURE_COUNT} features, got {}", v.len()))?;
        if let Some(bad) = arr
            .iter()
            .find(|x| !x.is_finite() || !(0.0..=1.0).contains(*x))
        {
            return Err(format!("feature value {bad} outside [0, 1]"));
        }
        Ok(Self(arr))
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0.to_vec()
    }
}

/// Groups proposals that count as "similar" for approval/denial history:
/// the change category plus the top-level directory of the dominant path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SimilarityKey {
    pub category: ChangeCategory,
    pub area: String,
}

impl SimilarityKey {
    pub fn new(category: ChangeCategory, area: impl Into<String>) -> Self {
        Self {
            category,
            area: area.into(),
        }
    }

    pub fn of(p: &ActionProposal) -> Self {
        Self::for_paths(p.change_category, &p.paths)
    }

    /// The dominant area is the most common top-level directory; ties go to
    /// the lexicographically smallest. Root-level files map to ".".
    pub fn for_paths(category: ChangeCategory, paths: &[String]) -> Self {
        let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
        for p in paths {
            *tally.entry(top_level_dir(p)).or_default() += 1;
        }
        let area = tally
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(dir, _)| dir.to_string())
            .unwrap_or_default();
        Self { category, area }
    }
}

impl fmt::Display for SimilarityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.area.is_empty() {
            write!(f, "{}", self.category)
        } else {
            write!(f, "{} @ {}", self.category, self.area)
        }
    }
}

fn top_level_dir(path: &str) -> &str {
    let trimmed = path.trim_start_matches("./").trim_start_matches('/');
    match trimmed.split_once('/') {
        Some((dir, _)) if !dir.is_empty() => dir,
        _ => ".",
    }
}

/// Read-only slice of the trace history that feature extraction needs.
pub trait TraceStoreView {
    /// (approvals, denials) over decisions sharing `key`.
    fn counts_for(&self, key: &SimilarityKey) -> (u32, u32);
    /// Whether an approved action has touched `path` before.
    fn is_touched(&self, path: &str) -> bool;
    /// (failures, runs) over the most recent verification window.
    fn recent_verifications(&self) -> (u32, u32);
}

/// Running tallies of developer verdicts within the current session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub approvals: u32,
    pub decisions: u32,
}

impl SessionStats {
    pub fn approval_rate(&self) -> f64 {
        if self.decisions == 0 {
            0.5
        } else {
            self.approvals as f64 / self.decisions as f64
        }
    }

    pub fn record(&mut self, approved: bool) {
        self.decisions += 1;
        if approved {
            self.approvals += 1;
        }
    }
}

pub fn change_pattern_risk(c: ChangeCategory) -> f64 {
    match c {
        ChangeCategory::Security => 1.0,
        ChangeCategory::Api => 0.9,
        ChangeCategory::DataModel => 0.85,
        ChangeCategory::Config => 0.7,
        ChangeCategory::General => 0.2,
        ChangeCategory::Test => 0.1,
        ChangeCategory::Doc => 0.05,
    }
}

pub fn action_type_risk(k: ActionKind) -> f64 {
    match k {
        ActionKind::Read => 0.1,
        ActionKind::Plan => 0.3,
        ActionKind::CheckIn => 0.0,
        ActionKind::RunCommand => 0.7,
        ActionKind::Apply => 0.8,
    }
}

pub fn diff_size_norm(diff_lines: u32) -> f64 {
    ((diff_lines as f64).ln_1p() / DIFF_SATURATION_LINES.ln_1p()).min(1.0)
}

pub fn blast_radius_norm(files: u32) -> f64 {
    (files as f64 / BLAST_SATURATION_FILES).min(1.0)
}

pub fn count_norm(count: u32) -> f64 {
    ((count as f64).ln_1p() / COUNT_SATURATION.ln_1p()).min(1.0)
}

const SECURITY_MARKERS: [&str; 12] = [
    "auth",
    "security",
    "secret",
    "credential",
    "password",
    "passwd",
    "token",
    "crypto",
    "ssl",
    "tls",
    ".env",
    "private_key",
];

/// Security-sensitive by category or by any path segment naming a
/// security concern.
pub fn is_security_sensitive(category: ChangeCategory, paths: &[String]) -> bool {
    category == ChangeCategory::Security
        || paths.iter().any(|p| {
            let lower = p.to_ascii_lowercase();
            SECURITY_MARKERS.iter().any(|m| lower.contains(m))
        })
}

/// Raw, unstandardized signals behind one feature vector. Feature extraction
/// gathers these from a proposal plus history; synthetic generators build
/// them directly.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSignals {
    pub action_kind: ActionKind,
    pub category: ChangeCategory,
    pub diff_lines: u32,
    pub files_touched: u32,
    pub prior_approvals: u32,
    pub prior_denials: u32,
    pub security_sensitive: bool,
    pub verification_failures: u32,
    pub verification_runs: u32,
    pub model_confidence: f64,
    pub first_touch: bool,
    pub phase: Phase,
    pub session: SessionStats,
}

impl RawSignals {
    pub fn encode(&self) -> FeatureVector {
        let approvals = count_norm(self.prior_approvals);
        let denials = count_norm(self.prior_denials);
        let mut v = [0.0; FEATURE_COUNT];
        v[Feature::DiffSizeNorm.index()] = diff_size_norm(self.diff_lines);
        v[Feature::BlastRadiusNorm.index()] = blast_radius_norm(self.files_touched);
        v[Feature::ChangePatternRisk.index()] = change_pattern_risk(self.category);
        v[Feature::PriorApprovalsNorm.index()] = approvals;
        v[Feature::PriorDenialsNorm.index()] = denials;
        v[Feature::IsSecuritySensitive.index()] = f64::from(u8::from(self.security_sensitive));
        v[Feature::VerificationFailureRate.index()] =
            self.verification_failures as f64 / self.verification_runs.max(1) as f64;
        v[Feature::ModelConfidenceAvg.index()] = self.model_confidence;
        v[Feature::IsFirstTouch.index()] = f64::from(u8::from(self.first_touch));
        v[Feature::ActionTypeRisk.index()] = action_type_risk(self.action_kind);
        v[Feature::PhaseAlignment.index()] =
            f64::from(u8::from(phase_gate(self.action_kind, self.phase)));
        v[Feature::SessionApprovalRate.index()] = self.session.approval_rate();
        v[Feature::PathTrust.index()] = approvals * (1.0 - denials);
        FeatureVector::new(v)
    }
}

/// Gathers the raw signals for `p` from history and session state.
pub fn signals_for(
    p: &ActionProposal,
    history: &dyn TraceStoreView,
    session: &SessionStats,
) -> RawSignals {
    let key = SimilarityKey::of(p);
    let (prior_approvals, prior_denials) = history.counts_for(&key);
    let (verification_failures, verification_runs) = history.recent_verifications();
    let paths = p.unique_paths();
    let first_touch = !paths.is_empty() && paths.iter().any(|path| !history.is_touched(path));
    RawSignals {
        action_kind: p.action_kind,
        category: p.change_category,
        diff_lines: p.diff_lines,
        files_touched: p.files_touched,
        prior_approvals,
        prior_denials,
        security_sensitive: is_security_sensitive(p.change_category, &p.paths),
        verification_failures,
        verification_runs,
        model_confidence: p.model_confidence,
        first_touch,
        phase: p.phase,
        session: *session,
    }
}

pub fn extract_features(
    p: &ActionProposal,
    history: &dyn TraceStoreView,
    session: &SessionStats,
) -> FeatureVector {
    signals_for(p, history, session).encode()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    #[derive(Default)]
    struct FakeHistory {
        counts: HashMap<SimilarityKey, (u32, u32)>,
        touched: HashSet<String>,
        verifications: (u32, u32),
    }

    impl TraceStoreView for FakeHistory {
        fn counts_for(&self, key: &SimilarityKey) -> (u32, u32) {
            self.counts.get(key).copied().unwrap_or_default()
        }
        fn is_touched(&self, path: &str) -> bool {
            self.touched.contains(path)
        }
        fn recent_verifications(&self) -> (u32, u32) {
            self.verifications
        }
    }

    fn proposal(kind: ActionKind, path: &str, cat: ChangeCategory, diff: u32) -> ActionProposal {
        ActionProposal {
            id: 1,
            action_kind: kind,
            paths: vec![path.into()],
            change_category: cat,
            diff_lines: diff,
            files_touched: 1,
            model_confidence: 0.8,
            phase: Phase::Implementation,
            rationale: String::new(),
        }
    }

    #[test]
    fn first_read_on_empty_history() {
        let mut p = proposal(ActionKind::Read, "src/util.rs", ChangeCategory::General, 0);
        p.phase = Phase::Research;
        let x = extract_features(&p, &FakeHistory::default(), &SessionStats::default());
        assert_eq!(x.get(Feature::IsFirstTouch), 1.0);
        assert_eq!(x.get(Feature::PriorApprovalsNorm), 0.0);
        assert_eq!(x.get(Feature::PriorDenialsNorm), 0.0);
        assert_eq!(x.get(Feature::SessionApprovalRate), 0.5);
        assert_eq!(x.get(Feature::PhaseAlignment), 1.0);
    }

    #[test]
    fn three_denials_on_api_file() {
        let p = proposal(
            ActionKind::Apply,
            "task_api/api.py",
            ChangeCategory::Api,
            20,
        );
        let mut h = FakeHistory::default();
        h.counts
            .insert(SimilarityKey::new(ChangeCategory::Api, "task_api"), (0, 3));
        let x = extract_features(&p, &h, &SessionStats::default());
        // log1p(3)/log1p(10) = ln 4 / ln 11
        assert!((x.get(Feature::PriorDenialsNorm) - 0.578_129_7).abs() < 1e-6);
        assert_eq!(x.get(Feature::ChangePatternRisk), 0.9);
        assert_eq!(x.get(Feature::PathTrust), 0.0);
    }

    #[test]
    fn five_approvals_on_utility_file() {
        let p = proposal(ActionKind::Apply, "lib/util.py", ChangeCategory::General, 6);
        let mut h = FakeHistory::default();
        h.counts
            .insert(SimilarityKey::new(ChangeCategory::General, "lib"), (5, 0));
        h.touched.insert("lib/util.py".into());
        let x = extract_features(&p, &h, &SessionStats::default());
        // ln 6 / ln 11
        assert!((x.get(Feature::PriorApprovalsNorm) - 0.747_221_7).abs() < 1e-6);
        assert_eq!(x.get(Feature::ChangePatternRisk), 0.2);
        assert_eq!(x.get(Feature::IsFirstTouch), 0.0);
        assert!((x.get(Feature::PathTrust) - x.get(Feature::PriorApprovalsNorm)).abs() < 1e-15);
    }

    #[test]
    fn verification_failures_feed_failure_rate() {
        let p = proposal(ActionKind::Apply, "a/b.rs", ChangeCategory::General, 3);
        let h = FakeHistory {
            verifications: (1, 1),
            ..Default::default()
        };
        let x = extract_features(&p, &h, &SessionStats::default());
        assert_eq!(x.get(Feature::VerificationFailureRate), 1.0);
    }

    #[test]
    fn saturating_encodings() {
        assert_eq!(diff_size_norm(0), 0.0);
        assert_eq!(diff_size_norm(500), 1.0);
        assert_eq!(diff_size_norm(10_000), 1.0);
        assert_eq!(blast_radius_norm(25), 1.0);
        assert_eq!(count_norm(10), 1.0);
        assert_eq!(count_norm(40), 1.0);
    }

    #[test]
    fn security_paths_are_detected() {
        assert!(is_security_sensitive(
            ChangeCategory::General,
            &["app/auth/session.py".into()]
        ));
        assert!(is_security_sensitive(ChangeCategory::Security, &[]));
        assert!(!is_security_sensitive(
            ChangeCategory::Api,
            &["task_api/api.py".into()]
        ));
    }

    #[test]
    fn similarity_key_uses_dominant_top_level_dir() {
        let paths = vec![
            "task_api/api.py".to_string(),
            "task_api/service.py".to_string(),
            "tests/test_api.py".to_string(),
        ];
        assert_eq!(
            SimilarityKey::for_paths(ChangeCategory::General, &paths).area,
            "task_api"
        );
        assert_eq!(
            SimilarityKey::for_paths(ChangeCategory::Doc, &["README.md".into()]).area,
            "."
        );
        assert_eq!(SimilarityKey::for_paths(ChangeCategory::Doc, &[]).area, "");
    }

    #[test]
    fn feature_vector_rejects_wrong_dimension_on_decode() {
        assert!(serde_json::from_str::<FeatureVector>("[0.1, 0.2]").is_err());
        assert!(serde_json::from_str::<FeatureVector>("[0,0,0,0,0,0,0,0,0,0,0,0,2]").is_err());
        let ok: FeatureVector = serde_json::from_str("[0,0,0,0,0,0,0,0,0,0,0,0,1]").unwrap();
        assert_eq!(ok.get(Feature::PathTrust), 1.0);
    }
}
