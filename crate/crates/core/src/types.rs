//! Domain types shared by every governance module.
//!
//! These are plain values: they validate themselves but carry no behavior
//! beyond that. All enums are closed; decoding an unknown discriminant is an
//! error.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What kind of step the agent wants to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Read,
    Plan,
    Apply,
    RunCommand,
    CheckIn,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::Read,
        ActionKind::Plan,
        ActionKind::Apply,
        ActionKind::RunCommand,
        ActionKind::CheckIn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Read => "read",
            ActionKind::Plan => "plan",
            ActionKind::Apply => "apply",
            ActionKind::RunCommand => "run_command",
            ActionKind::CheckIn => "check_in",
        }
    }

    /// Kinds that never carry a diff.
    pub fn is_diffless(self) -> bool {
        matches!(
            self,
            ActionKind::Read | ActionKind::Plan | ActionKind::CheckIn
        )
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The change pattern of a proposal. Closed so that pattern risk stays total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeCategory {
    Api,
    DataModel,
    Config,
    Security,
    Test,
    Doc,
    General,
}

impl ChangeCategory {
    pub const ALL: [ChangeCategory; 7] = [
        ChangeCategory::Api,
        ChangeCategory::DataModel,
        ChangeCategory::Config,
        ChangeCategory::Security,
        ChangeCategory::Test,
        ChangeCategory::Doc,
        ChangeCategory::General,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChangeCategory::Api => "api",
            ChangeCategory::DataModel => "data_model",
            ChangeCategory::Config => "config",
            ChangeCategory::Security => "security",
            ChangeCategory::Test => "test",
            ChangeCategory::Doc => "doc",
            ChangeCategory::General => "general",
        }
    }

    /// Categories whose changes are structurally risky regardless of history.
    pub fn is_structural(self) -> bool {
        matches!(
            self,
            ChangeCategory::Api
                | ChangeCategory::DataModel
                | ChangeCategory::Security
                | ChangeCategory::Config
        )
    }
}

impl fmt::Display for ChangeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown topic `{0}`")]
pub struct UnknownTopic(pub String);

impl FromStr for ChangeCategory {
    type Err = UnknownTopic;

    /// Accepts the canonical names plus a few spellings developers type.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let cat = match norm.as_str() {
            "api" | "apis" => ChangeCategory::Api,
            "data_model" | "datamodel" | "schema" | "schemas" => ChangeCategory::DataModel,
            "config" | "configs" | "configuration" => ChangeCategory::Config,
            "security" => ChangeCategory::Security,
            "test" | "tests" => ChangeCategory::Test,
            "doc" | "docs" | "documentation" => ChangeCategory::Doc,
            "general" => ChangeCategory::General,
            _ => return Err(UnknownTopic(s.to_string())),
        };
        Ok(cat)
    }
}

/// Workflow phase. Ordered: phases only move forward within a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Research,
    Planning,
    Implementation,
    Review,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Research => "research",
            Phase::Planning => "planning",
            Phase::Implementation => "implementation",
            Phase::Review => "review",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One action the agent wants to take, with the metadata governance needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionProposal {
    pub id: u64,
    pub action_kind: ActionKind,
    #[serde(default)]
    pub paths: Vec<String>,
    pub change_category: ChangeCategory,
    #[serde(default)]
    pub diff_lines: u32,
    #[serde(default)]
    pub files_touched: u32,
    pub model_confidence: f64,
    pub phase: Phase,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid proposal: {field}: {reason}")]
pub struct InvalidProposal {
    pub field: &'static str,
    pub reason: String,
}

impl ActionProposal {
    /// Distinct paths in first-seen order.
    pub fn unique_paths(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.paths
            .iter()
            .map(String::as_str)
            .filter(|p| seen.insert(*p))
            .collect()
    }
}

pub fn validate_proposal(p: &ActionProposal) -> Result<(), InvalidProposal> {
    if !p.model_confidence.is_finite() || !(0.0..=1.0).contains(&p.model_confidence) {
        return Err(InvalidProposal {
            field: "model_confidence",
            reason: format!("{} is outside [0, 1]", p.model_confidence),
        });
    }
    if p.action_kind.is_diffless() && p.diff_lines != 0 {
        return Err(InvalidProposal {
            field: "diff_lines",
            reason: format!(
                "{} actions carry no diff, got {}",
                p.action_kind, p.diff_lines
            ),
        });
    }
    if p.paths.iter().any(|path| path.trim().is_empty()) {
        return Err(InvalidProposal {
            field: "paths",
            reason: "empty path".into(),
        });
    }
    if !p.paths.is_empty() {
        let unique = p.unique_paths().len() as u32;
        if p.files_touched != unique {
            return Err(InvalidProposal {
                field: "files_touched",
                reason: format!(
                    "{} distinct paths but files_touched = {}",
                    unique, p.files_touched
                ),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approved,
    ApprovedRemembered,
    Denied,
    CorrectedThenApproved,
}

impl Verdict {
    pub fn is_approval(self) -> bool {
        !matches!(self, Verdict::Denied)
    }

    /// Training label: 1 = the action was acceptable to proceed.
    pub fn label(self) -> bool {
        self.is_approval()
    }
}

/// Who caused the decision to be made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initiator {
    PolicyInitiated,
    AgentInitiated,
    SilentAuto,
    FlaggedAuto,
}

impl Initiator {
    pub fn is_auto(self) -> bool {
        matches!(self, Initiator::SilentAuto | Initiator::FlaggedAuto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decision {
    pub proposal_id: u64,
    pub verdict: Verdict,
    pub initiator: Initiator,
    /// Absent when a hard constraint decided the route.
    pub score: Option<f64>,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid decision: {0}")]
pub struct InvalidDecision(pub &'static str);

impl Decision {
    pub fn validate(&self) -> Result<(), InvalidDecision> {
        if self.initiator.is_auto() && self.verdict != Verdict::Approved {
            return Err(InvalidDecision("automatic decisions are always Approved"));
        }
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(InvalidDecision("score outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Named autonomy preferences a developer (or seeding) can grant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferenceName {
    PreferFewerCheckins,
    SkipLowRiskPlanCheckpoint,
}

impl PreferenceName {
    pub fn as_str(self) -> &'static str {
        match self {
            PreferenceName::PreferFewerCheckins => "prefer_fewer_checkins",
            PreferenceName::SkipLowRiskPlanCheckpoint => "skip_low_risk_plan_checkpoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutonomyPreference {
    pub name: PreferenceName,
    /// Categories the preference applies to; empty means all.
    #[serde(default)]
    pub scope_topics: BTreeSet<ChangeCategory>,
    pub active: bool,
}

impl AutonomyPreference {
    pub fn new(name: PreferenceName) -> Self {
        Self {
            name,
            scope_topics: BTreeSet::new(),
            active: true,
        }
    }

    pub fn applies_to(&self, category: ChangeCategory) -> bool {
        self.active && (self.scope_topics.is_empty() || self.scope_topics.contains(&category))
    }
}
